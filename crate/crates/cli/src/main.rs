//! `ultitiming`: detect receiver cuts in tracking data and score their timing.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ultitiming", version, about = "Timing analysis of receiver cuts in Ultimate tracking data")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Evaluation grid cell size in meters.
    #[arg(long, global = true)]
    grid_cell: Option<f64>,
    /// Disc flight speed in m/s.
    #[arg(long, global = true)]
    v_disc: Option<f64>,
    /// Directory for every output file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Input {
    /// Tracking CSV.
    pub input: PathBuf,
    /// Interpolate the disc, re-estimate derivatives and re-pair markers.
    #[arg(long)]
    pub preprocess: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a tracking file and summarise it.
    Ingest(Input),
    /// Detect cut sequences.
    Detect(Input),
    /// Score every timing shift of detected sequences.
    Sweep(commands::SweepArgs),
    /// Compare frame values of pass targets and others.
    Stats(commands::StatsArgs),
    /// Render control layers as heatmaps.
    Render(commands::RenderArgs),
    /// Generate synthetic tracking data.
    Synth(commands::SynthArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let flags = Overrides {
        jobs: cli.jobs,
        grid_cell: cli.grid_cell,
        v_disc: cli.v_disc,
        out_dir: cli.out_dir.clone(),
    };
    let cfg = match RunConfig::load(cli.config.as_deref(), &flags) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli.command, &cfg)),
        Err(e) => Err(commands::Failure::Other(e.into())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command, cfg: &RunConfig) -> Result<(), commands::Failure> {
    cfg.write_resolved().map_err(commands::Failure::Other)?;
    match command {
        Command::Ingest(input) => commands::ingest(&input, cfg),
        Command::Detect(input) => commands::detect(&input, cfg),
        Command::Sweep(args) => commands::sweep(&args, cfg),
        Command::Stats(args) => commands::stats(&args, cfg),
        Command::Render(args) => commands::render(&args, cfg),
        Command::Synth(args) => commands::synth(&args, cfg),
    }
}
