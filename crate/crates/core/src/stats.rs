//! Rank-based comparisons of frame values between pass targets and others.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("need at least 2 non-holding attackers, found {0}")]
    TooFewPlayers(usize),
    #[error("player {0} has no value in this frame")]
    UnknownPlayer(u8),
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn check(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Theta-function form, fast for small arguments.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let sum: f64 = (1..=20)
            .map(|k| {
                let j = f64::from(2 * k - 1);
                (-j * j * c).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let sum: f64 = (1..=100)
            .map(|k| {
                let k = f64::from(k);
                let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum();
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value for
/// `sqrt(nm / (n + m)) * D`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    check(a, b)?;
    let (xs, ys) = (sorted(a), sorted(b));
    let (n, m) = (xs.len(), ys.len());
    // Largest |F_a - F_b| scaled by n·m, kept in integers.
    let (mut i, mut j, mut best) = (0usize, 0usize, 0u64);
    while i < n && j < m {
        let x = xs[i].min(ys[j]);
        while i < n && xs[i] <= x {
            i += 1;
        }
        while j < m && ys[j] <= x {
            j += 1;
        }
        let gap = (i as i64 * m as i64 - j as i64 * n as i64).unsigned_abs();
        best = best.max(gap);
    }
    let nm = (n * m) as f64;
    let d = best as f64 / nm;
    let lambda = (nm / (n + m) as f64).sqrt() * d;
    Ok(KsResult {
        d,
        p: kolmogorov_sf(lambda),
    })
}

/// Counts of `a > b` and `a == b` over all pairs.
fn pair_counts(a: &[f64], b: &[f64]) -> (u64, u64) {
    let ys = sorted(b);
    a.iter().fold((0, 0), |(gt, eq), &x| {
        let below = ys.partition_point(|&y| y < x);
        let not_above = ys.partition_point(|&y| y <= x);
        (gt + below as u64, eq + (not_above - below) as u64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannWhitney {
    /// Statistic for the first sample: pairs it wins plus half the ties.
    pub u: f64,
    pub p: f64,
}

/// Mann-Whitney U with tie-corrected normal approximation and continuity
/// correction (two-sided).
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    check(a, b)?;
    let (gt, eq) = pair_counts(a, b);
    let u = gt as f64 + eq as f64 / 2.0;
    let (n, m) = (a.len() as f64, b.len() as f64);
    let total = n + m;
    let pooled = sorted(&[a, b].concat());
    let mut tie_term = 0.0;
    let mut k = 0;
    while k < pooled.len() {
        let run = pooled[k..].partition_point(|&v| v == pooled[k]);
        let t = run as f64;
        tie_term += t * t * t - t;
        k += run;
    }
    let variance = n * m / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    let p = if variance > 0.0 {
        let z = ((u - n * m / 2.0).abs() - 0.5).max(0.0) / variance.sqrt();
        statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
    } else {
        1.0
    };
    Ok(MannWhitney {
        u,
        p: p.min(1.0),
    })
}

/// Cliff's delta, `(#{a > b} - #{a < b}) / (n m)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check(a, b)?;
    let (gt, eq) = pair_counts(a, b);
    let nm = (a.len() * b.len()) as u64;
    let lt = nm - gt - eq;
    Ok((gt as i64 - lt as i64) as f64 / nm as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankRecord {
    pub frame: u32,
    /// 1 is the highest value; ties share the better rank.
    pub rank: usize,
    pub team_size: usize,
}

/// Dense rank of `detected` among the attackers in `values`, leaving out the holder.
pub fn rank_within_team(
    frame: u32,
    values: &[(u8, f64)],
    detected: u8,
    holder: Option<u8>,
) -> Result<RankRecord, StatsError> {
    let team: Vec<f64> = values
        .iter()
        .filter(|(id, _)| Some(*id) != holder)
        .map(|&(_, v)| v)
        .collect();
    if team.len() < 2 {
        return Err(StatsError::TooFewPlayers(team.len()));
    }
    let mine = values
        .iter()
        .find(|(id, _)| *id == detected && Some(*id) != holder)
        .ok_or(StatsError::UnknownPlayer(detected))?
        .1;
    let mut above: Vec<f64> = team.into_iter().filter(|&v| v > mine).collect();
    above.sort_by(f64::total_cmp);
    above.dedup();
    Ok(RankRecord {
        frame,
        rank: above.len() + 1,
        team_size: values.iter().filter(|(id, _)| Some(*id) != holder).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Target,
    Others,
}

/// Keeps only confident predictions: `>= 0.55` is a target, `<= 0.30` is not.
pub fn label_from_probability(p: f64) -> Option<Label> {
    if p >= 0.55 {
        Some(Label::Target)
    } else if p <= 0.30 {
        Some(Label::Others)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Group1,
    Group2,
    All,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Group1 => "group1",
            Group::Group2 => "group2",
            Group::All => "all",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "group1" | "1" => Ok(Group::Group1),
            "group2" | "2" => Ok(Group::Group2),
            "all" => Ok(Group::All),
            other => Err(format!("unknown group `{other}`")),
        }
    }
}

/// One labelled frame of a detected player.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledSample {
    pub possession_id: u32,
    pub player_id: u8,
    pub frame: u32,
    pub value: f64,
    pub rank: usize,
    pub label: Label,
    pub group: Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub ks: KsResult,
    pub mann_whitney: MannWhitney,
    pub cliffs_delta: f64,
}

impl Comparison {
    /// Target sample first, others second.
    pub fn between(target: &[f64], others: &[f64]) -> Result<Self, StatsError> {
        Ok(Self {
            ks: ks_two_sample(target, others)?,
            mann_whitney: mann_whitney_u(target, others)?,
            cliffs_delta: cliffs_delta(target, others)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub n_target: usize,
    pub n_others: usize,
    /// Frame values of the detected player.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_frame: Option<Comparison>,
    /// Within-team ranks of the detected player (lower is better).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<Comparison>,
}

/// Target-versus-others comparisons for each group and for everything pooled.
///
/// Groups with an empty side get counts only.
pub fn summarize(samples: &[LabeledSample]) -> BTreeMap<Group, GroupSummary> {
    let mut out = BTreeMap::new();
    for group in [Group::Group1, Group::Group2, Group::All] {
        let members: Vec<&LabeledSample> = samples
            .iter()
            .filter(|s| group == Group::All || s.group == group)
            .collect();
        if members.is_empty() {
            continue;
        }
        let pick = |label: Label, f: fn(&LabeledSample) -> f64| -> Vec<f64> {
            members.iter().filter(|s| s.label == label).map(|s| f(s)).collect()
        };
        let value = |s: &LabeledSample| s.value;
        let rank = |s: &LabeledSample| s.rank as f64;
        let (vt, vo) = (pick(Label::Target, value), pick(Label::Others, value));
        let (rt, ro) = (pick(Label::Target, rank), pick(Label::Others, rank));
        out.insert(
            group,
            GroupSummary {
                n_target: vt.len(),
                n_others: vo.len(),
                v_frame: Comparison::between(&vt, &vo).ok(),
                rank: Comparison::between(&rt, &ro).ok(),
            },
        );
    }
    out
}

/// Per-frame values of every non-holding attacker, keyed by
/// `(possession, detected player, frame)`.
pub type TeamValues = BTreeMap<(u32, u8, u32), Vec<(u8, f64)>>;

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, StatsError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| StatsError::Parse {
            line: 1,
            msg: format!("missing column `{name}`"),
        })
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<T, StatsError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| StatsError::Parse {
        line,
        msg: format!("bad value `{raw}`"),
    })
}

fn rows<R: Read>(
    reader: R,
    columns: &[&str],
    mut each: impl FnMut(&csv::StringRecord, &[usize], u64) -> Result<(), StatsError>,
) -> Result<(), StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = columns
        .iter()
        .map(|c| header_index(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        each(&rec, &idx, line)?;
    }
    Ok(())
}

/// Reads `possession_id,detected_id,frame,player_id,v_frame`.
pub fn read_team_values<R: Read>(reader: R) -> Result<TeamValues, StatsError> {
    let mut out = TeamValues::new();
    rows(
        reader,
        &["possession_id", "detected_id", "frame", "player_id", "v_frame"],
        |rec, idx, line| {
            let key = (field(rec, idx[0], line)?, field(rec, idx[1], line)?, field(rec, idx[2], line)?);
            let value: f64 = field(rec, idx[4], line)?;
            out.entry(key)
                .or_default()
                .push((field(rec, idx[3], line)?, value));
            Ok(())
        },
    )?;
    Ok(out)
}

/// Reads `possession_id,player_id,frame,probability`.
pub fn read_probabilities<R: Read>(reader: R) -> Result<BTreeMap<(u32, u8, u32), f64>, StatsError> {
    let mut out = BTreeMap::new();
    rows(
        reader,
        &["possession_id", "player_id", "frame", "probability"],
        |rec, idx, line| {
            let key = (field(rec, idx[0], line)?, field(rec, idx[1], line)?, field(rec, idx[2], line)?);
            out.insert(key, field(rec, idx[3], line)?);
            Ok(())
        },
    )?;
    Ok(out)
}

/// Reads `possession_id,group`.
pub fn read_roster<R: Read>(reader: R) -> Result<HashMap<u32, Group>, StatsError> {
    let mut out = HashMap::new();
    rows(reader, &["possession_id", "group"], |rec, idx, line| {
        let group = rec.get(idx[1]).unwrap_or("").parse().map_err(|msg| StatsError::Parse { line, msg })?;
        out.insert(field(rec, idx[0], line)?, group);
        Ok(())
    })?;
    Ok(out)
}

/// Joins team values with confident target probabilities and group labels.
///
/// Frames without a probability, with an ambiguous one, or whose possession
/// is missing from the roster are dropped. The team values never contain
/// the holder, so ranks are taken over every listed player.
pub fn label_samples(
    values: &TeamValues,
    probabilities: &BTreeMap<(u32, u8, u32), f64>,
    roster: &HashMap<u32, Group>,
) -> Result<Vec<LabeledSample>, StatsError> {
    let mut out = Vec::new();
    for (&(possession_id, player_id, frame), team) in values {
        let Some(label) = probabilities
            .get(&(possession_id, player_id, frame))
            .and_then(|&p| label_from_probability(p))
        else {
            continue;
        };
        let Some(&group) = roster.get(&possession_id) else {
            continue;
        };
        let rank = rank_within_team(frame, team, player_id, None)?;
        let value = team.iter().find(|(id, _)| *id == player_id).map_or(0.0, |t| t.1);
        out.push(LabeledSample {
            possession_id,
            player_id,
            frame,
            value,
            rank: rank.rank,
            label,
            group,
        });
    }
    Ok(out)
}
