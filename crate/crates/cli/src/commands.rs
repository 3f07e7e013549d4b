use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use ultitiming::control::{layer_values, Grid, Layer};
use ultitiming::counterfactual::{shift_players, DefenderRule, ShiftParameter};
use ultitiming::dataio::{self, FrameTable, ObjectClass};
use ultitiming::detect::{
    detect_sequences, extend_backward, extend_forward, read_sequences_csv, write_sequences_csv,
    MovementSequence,
};
use ultitiming::render::save_heatmap;
use ultitiming::stats::{self, Group};
use ultitiming::synth;
use ultitiming::timing::{self, SweepMode, TimingReport, SCHEMA_VERSION};

use crate::config::RunConfig;
use crate::Input;

/// Exit code 2 for invalid input or usage, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Other(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Other(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn load(input: &Input, cfg: &RunConfig) -> Result<FrameTable, Failure> {
    let table = dataio::parse_csv(&input.input)
        .with_context(|| format!("validating {}", input.input.display()))
        .map_err(invalid)?;
    if input.preprocess {
        dataio::preprocess(&table, &cfg.smoothing)
            .with_context(|| format!("preprocessing {}", input.input.display()))
            .map_err(invalid)
    } else {
        Ok(table)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Other)
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Other(e.into()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn grid(cfg: &RunConfig) -> Grid {
    Grid::new(cfg.grid_cell)
}

pub fn ingest(input: &Input, cfg: &RunConfig) -> CmdResult {
    let table = load(input, cfg)?;
    let count = |class: ObjectClass| table.frames()[0].players(class).count();
    let holder_frames = table.frames().iter().filter(|f| f.holder().is_some()).count();
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "input": input.input,
        "preprocessed": input.preprocess,
        "fps": table.fps(),
        "frames": table.frames().len(),
        "possessions": table.possessions().len(),
        "objects": table.frames().len() * dataio::OBJECTS_PER_FRAME,
        "objects_per_frame": {
            "offense": count(ObjectClass::Offense),
            "defense": count(ObjectClass::Defense),
            "disc": count(ObjectClass::Disc),
        },
        "holder_frames": holder_frames,
        "possession_lengths": table.possessions().iter().map(|p| p.len()).collect::<Vec<_>>(),
    });
    write_json(&cfg.out_dir.join("ingest_summary.json"), &summary)?;
    if input.preprocess {
        let path = cfg.out_dir.join("preprocessed.csv");
        dataio::save_csv(&table, &path).map_err(|e| Failure::Other(e.into()))?;
    }
    println!(
        "{} frames, {} possessions, {} objects",
        table.frames().len(),
        table.possessions().len(),
        table.frames().len() * dataio::OBJECTS_PER_FRAME
    );
    Ok(())
}

pub fn detect(input: &Input, cfg: &RunConfig) -> CmdResult {
    let table = load(input, cfg)?;
    let detected = detect_sequences(&table, &cfg.detection);
    let path = cfg.out_dir.join("sequences.csv");
    write_sequences_csv(&detected, create(&path)?).map_err(|e| Failure::Other(e.into()))?;
    let kept = detected.iter().filter(|d| d.retained()).count();
    println!("{} sequences detected, {} retained", detected.len(), kept);
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: Input,
    /// Sequence list in the `detect` output layout (default: detect now).
    #[arg(long)]
    pub sequences: Option<PathBuf>,
    /// Score a single cut of this player starting at --t0.
    #[arg(long, requires = "t0")]
    pub player: Option<u8>,
    #[arg(long, requires = "player")]
    pub t0: Option<u32>,
    /// Also score sequences dropped by the crowding checks.
    #[arg(long)]
    pub include_excluded: bool,
    /// Score only the unshifted play.
    #[arg(long)]
    pub zero_only: bool,
    /// Write per-frame values of every scenario.
    #[arg(long)]
    pub frame_csv: bool,
    /// Write per-frame values of all non-holding attackers on the actual play.
    #[arg(long)]
    pub team_values: bool,
    /// Render the target's weighted control on every scored frame of the
    /// actual play and of the best shifted scenario.
    #[arg(long)]
    pub heatmaps: bool,
}

fn select_sequences(args: &SweepArgs, table: &FrameTable, cfg: &RunConfig) -> Result<Vec<MovementSequence>, Failure> {
    if let (Some(player), Some(t0)) = (args.player, args.t0) {
        let poss = table
            .possession_of(t0)
            .ok_or_else(|| invalid(anyhow!("frame {t0} is not in the data")))?;
        let seq = MovementSequence::at(poss.id, player, t0);
        let seq = extend_forward(table, extend_backward(table, seq, &cfg.detection), &cfg.detection);
        return Ok(vec![seq]);
    }
    if let Some(path) = &args.sequences {
        let file = File::open(path)
            .with_context(|| format!("opening {}", path.display()))
            .map_err(invalid)?;
        let rows = read_sequences_csv(file)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(invalid)?;
        return Ok(rows
            .iter()
            .filter(|r| r.retained || args.include_excluded)
            .map(|r| r.sequence())
            .collect());
    }
    Ok(detect_sequences(table, &cfg.detection)
        .into_iter()
        .filter(|d| d.retained() || args.include_excluded)
        .map(|d| d.sequence)
        .collect())
}

fn sequence_key(seq: &MovementSequence) -> String {
    format!("{}_{}_{}", seq.possession_id, seq.player_id, seq.t0)
}

struct SweepOutput {
    report: TimingReport,
    team: Vec<(u32, Vec<(u8, f64)>)>,
}

pub fn sweep(args: &SweepArgs, cfg: &RunConfig) -> CmdResult {
    let table = load(&args.input, cfg)?;
    let sequences = select_sequences(args, &table, cfg)?;
    let grid = grid(cfg);
    let mode = if args.zero_only {
        SweepMode::ZeroOnly
    } else {
        SweepMode::Full
    };
    let results: Vec<_> = sequences
        .par_iter()
        .map(|seq| {
            let report = timing::sweep(
                &table,
                seq,
                DefenderRule::ClosestAtOnset,
                mode,
                &cfg.timing,
                &cfg.control,
                &grid,
            )?;
            let team = if args.team_values {
                timing::evaluation_span(&table, seq, &cfg.timing)
                    .map(|t| {
                        let frame = table.frame(t).expect("span inside the table");
                        (t, timing::team_frame_values(frame, &cfg.timing, &cfg.control, &grid))
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Ok::<_, timing::TimingError>(SweepOutput { report, team })
        })
        .collect();

    let mut team_out = if args.team_values {
        let mut w = create(&cfg.out_dir.join("team_values.csv"))?;
        writeln!(w, "possession_id,detected_id,frame,player_id,v_frame")?;
        Some(w)
    } else {
        None
    };
    let mut failed = 0;
    for (seq, result) in sequences.iter().zip(results) {
        let key = sequence_key(seq);
        let out = match result {
            Ok(out) => out,
            Err(e) => {
                warn!("sequence {key}: {e}");
                failed += 1;
                continue;
            }
        };
        let report = &out.report;
        write_json(&cfg.out_dir.join(format!("report_{key}.json")), report)?;
        if args.frame_csv {
            let mut w = create(&cfg.out_dir.join(format!("vframe_{key}.csv")))?;
            report.write_frame_csv(&mut w)?;
            w.flush()?;
        }
        if let Some(w) = team_out.as_mut() {
            for (frame, values) in &out.team {
                for (id, v) in values {
                    writeln!(w, "{},{},{},{},{:.9}", seq.possession_id, seq.player_id, frame, id, v)?;
                }
            }
        }
        if args.heatmaps {
            heatmaps(&table, seq, report, &grid, cfg)?;
        }
        match (report.v_timing, report.best_xi) {
            (Some(v), Some(xi)) => info!("sequence {key}: timing value {v:.4}, best shift {xi}"),
            _ => info!("sequence {key}: value {:.4}", report.v_scenario[0]),
        }
    }
    if let Some(mut w) = team_out {
        w.flush()?;
    }
    println!("{} of {} sequences scored", sequences.len() - failed, sequences.len());
    if !sequences.is_empty() && failed == sequences.len() {
        return Err(Failure::Other(anyhow!("every sequence failed")));
    }
    Ok(())
}

fn heatmaps(
    table: &FrameTable,
    seq: &MovementSequence,
    report: &TimingReport,
    grid: &Grid,
    cfg: &RunConfig,
) -> CmdResult {
    let mut picks = vec![0];
    picks.extend(report.best_xi);
    let defender = DefenderRule::ClosestAtOnset.resolve(table, seq);
    for xi in picks {
        let shift = ShiftParameter::new(xi).map_err(|e| Failure::Other(e.into()))?;
        let scenario = shift_players(table, seq, shift, defender).map_err(|e| Failure::Other(e.into()))?;
        for frame_index in report.span[0]..=report.span[1] {
            let frame = scenario.frame(frame_index).expect("span inside scenario");
            let values = layer_values(frame, grid, &grid.all_cells(), Layer::Wuppcf, Some(seq.player_id), &cfg.control);
            let path = cfg
                .out_dir
                .join(format!("heatmap_{}_xi{}_f{}.png", sequence_key(seq), xi, frame_index));
            save_heatmap(&values, grid, 4, &path).map_err(|e| Failure::Other(e.into()))?;
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Team value CSVs written by `sweep --team-values`.
    #[arg(long, required = true, num_args = 1..)]
    pub values: Vec<PathBuf>,
    /// `possession_id,player_id,frame,probability` target probabilities.
    #[arg(long)]
    pub probabilities: PathBuf,
    /// `possession_id,group` roster.
    #[arg(long)]
    pub roster: PathBuf,
}

fn open_csv<T>(path: &Path, read: impl FnOnce(File) -> Result<T, stats::StatsError>) -> Result<T, Failure> {
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(invalid)?;
    read(file)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(invalid)
}

pub fn stats(args: &StatsArgs, cfg: &RunConfig) -> CmdResult {
    let mut values = stats::TeamValues::new();
    for path in &args.values {
        values.extend(open_csv(path, stats::read_team_values)?);
    }
    let probabilities = open_csv(&args.probabilities, stats::read_probabilities)?;
    let roster = open_csv(&args.roster, stats::read_roster)?;
    let samples = stats::label_samples(&values, &probabilities, &roster).map_err(invalid)?;
    let groups = stats::summarize(&samples);
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "samples": samples.len(),
        "groups": groups
            .iter()
            .map(|(g, s)| (g.as_str(), s))
            .collect::<std::collections::BTreeMap<_, _>>(),
    });
    write_json(&cfg.out_dir.join("stats_summary.json"), &summary)?;
    for (group, s) in &groups {
        match (&s.v_frame, &s.rank) {
            (Some(v), Some(r)) => println!(
                "{group}: {} target / {} others, KS D {:.4} (p {:.3e}), rank U p {:.3e}, delta {:.3}",
                s.n_target, s.n_others, v.ks.d, v.ks.p, r.mann_whitney.p, r.cliffs_delta
            ),
            _ => println!("{group}: {} target / {} others", s.n_target, s.n_others),
        }
    }
    if groups.is_empty() {
        warn!("no labelled samples; check probabilities and roster ({} groups known)", Group::All);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub input: Input,
    /// ppcf, uppcf, wuppcf, wd or ws (repeatable).
    #[arg(long = "layer", default_value = "wuppcf")]
    pub layers: Vec<String>,
    /// First frame to render.
    #[arg(long)]
    pub from: Option<u32>,
    /// Last frame to render (inclusive).
    #[arg(long)]
    pub to: Option<u32>,
    /// Player for per-player layers (default: offense total).
    #[arg(long)]
    pub player: Option<u8>,
    /// Pixels per grid cell.
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
    /// Also write the values as JSON rows.
    #[arg(long)]
    pub json: bool,
}

pub fn render(args: &RenderArgs, cfg: &RunConfig) -> CmdResult {
    let layers = args
        .layers
        .iter()
        .map(|l| l.parse::<Layer>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;
    let table = load(&args.input, cfg)?;
    let grid = grid(cfg);
    let cells = grid.all_cells();
    let lo = args.from.unwrap_or(0);
    let hi = args.to.unwrap_or(u32::MAX);
    let mut written = 0;
    for frame in table.frames().iter().filter(|f| (lo..=hi).contains(&f.index)) {
        for &layer in &layers {
            let values = layer_values(frame, &grid, &cells, layer, args.player, &cfg.control);
            let stem = format!("{}_{}", layer, frame.index);
            save_heatmap(&values, &grid, args.scale, cfg.out_dir.join(format!("{stem}.png")))
                .map_err(|e| Failure::Other(e.into()))?;
            if args.json {
                let rows: Vec<&[f64]> = values.chunks(grid.nx).collect();
                let doc = json!({
                    "schema_version": SCHEMA_VERSION,
                    "layer": layer,
                    "frame": frame.index,
                    "player": args.player,
                    "grid": {"cell": grid.cell, "nx": grid.nx, "ny": grid.ny, "origin": [0.0, 0.0]},
                    "rows": rows,
                });
                write_json(&cfg.out_dir.join(format!("{stem}.json")), &doc)?;
            }
            written += 1;
        }
    }
    println!("{written} images written");
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Play script; without one, random single-cut plays are generated.
    #[arg(long, conflicts_with = "plays")]
    pub script: Option<PathBuf>,
    /// Number of random plays, one possession each.
    #[arg(long, default_value_t = 1)]
    pub plays: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV (default: synthetic.csv in the output directory).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn synth(args: &SynthArgs, cfg: &RunConfig) -> CmdResult {
    let table = match &args.script {
        Some(path) => synth::load_script(path).and_then(|play| synth::generate(&play)),
        None => synth::random_session(args.plays, args.seed),
    }
    .map_err(invalid)?;
    let path = args
        .output
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("synthetic.csv"));
    dataio::save_csv(&table, &path).map_err(|e| Failure::Other(e.into()))?;
    println!(
        "{} frames in {} possessions written to {}",
        table.frames().len(),
        table.possessions().len(),
        path.display()
    );
    Ok(())
}
