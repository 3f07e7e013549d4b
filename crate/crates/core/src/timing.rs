//! Scoring receiver timing.
//!
//! For every frame the receiver is given a reachable area: the cells around
//! the point where a disc thrown now at `v_disc` could meet them. The frame
//! value is the receiver's mean weighted control over that area, a scenario
//! is scored by its best 15-frame window, and the timing value compares the
//! actual play against the best shifted one.

use std::io::Write;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{wuppcf, ControlParams, Grid};
use crate::counterfactual::{
    shift_players, CounterfactualError, DefenderRule, ShiftParameter, MAX_SHIFT,
};
use crate::dataio::{Frame, FrameTable, ObjectClass};
use crate::detect::MovementSequence;
use crate::geom::{distance_to_field, Vec2};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TimingError {
    #[error("evaluation span of {len} frames is too short for a {window}-frame window")]
    SpanTooShort { len: usize, window: usize },
    #[error("invalid timing parameter: {0}")]
    BadParams(&'static str),
    #[error("frame {0} is missing from the scenario")]
    MissingFrame(u32),
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingParams {
    /// Disc flight speed, m/s.
    pub v_disc: f64,
    /// Moving-average length, frames.
    pub window: usize,
    /// Frames evaluated before the earliest shifted onset.
    pub eval_start_offset: u32,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            v_disc: 12.0,
            window: 15,
            eval_start_offset: 15,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), TimingError> {
        if !(self.v_disc > 0.0 && self.v_disc.is_finite()) {
            return Err(TimingError::BadParams("v_disc must be positive"));
        }
        if self.window == 0 {
            return Err(TimingError::BadParams("window must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Intercept {
    /// Time until disc and receiver meet, s.
    pub tau: f64,
    /// Heading of the throw, radians.
    pub theta: f64,
    /// Meeting point.
    pub point: Vec2,
}

/// Earliest time a disc leaving `disc` at `v_disc` meets a player moving
/// at constant velocity, or `None` if it never can.
pub fn intercept(pos: Vec2, vel: Vec2, disc: Vec2, v_disc: f64) -> Option<Intercept> {
    let d = pos - disc;
    let make = |tau: f64| {
        let point = pos + vel * tau;
        let theta = (point - disc).normalized().map_or(vel.heading(), Vec2::heading);
        Intercept { tau, theta, point }
    };
    let c = d.norm_sq();
    if c == 0.0 {
        return Some(make(0.0));
    }
    let a = vel.norm_sq() - v_disc * v_disc;
    let b = 2.0 * d.dot(vel);
    let scale = vel.norm_sq() + v_disc * v_disc;
    let tau = if a.abs() <= 1e-12 * scale {
        // Player exactly as fast as the disc: b·τ + c = 0.
        (b < 0.0).then(|| -c / b)?
    } else {
        let disc_sq = b * b - 4.0 * a * c;
        if disc_sq < 0.0 {
            return None;
        }
        let q = -0.5 * (b + b.signum() * disc_sq.sqrt());
        let mut roots = [q / a, if q != 0.0 { c / q } else { f64::NAN }];
        roots.sort_by(f64::total_cmp);
        roots.into_iter().find(|r| *r > 0.0 && r.is_finite())?
    };
    Some(make(tau))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachableArea {
    pub tau: f64,
    pub theta: f64,
    pub center: Vec2,
    pub radius: f64,
    /// Grid cells whose centers lie in the circle.
    pub cells: Vec<usize>,
}

/// Cells where the receiver could take a pass thrown now.
///
/// A circle too small to hold any cell center falls back to the cell nearest
/// its center, provided the circle touches the field.
pub fn reachable_area(
    pos: Vec2,
    vel: Vec2,
    disc: Vec2,
    params: &TimingParams,
    grid: &Grid,
) -> Option<ReachableArea> {
    let hit = intercept(pos, vel, disc, params.v_disc)?;
    let center = hit.point;
    let radius = 0.5 * vel.norm() * hit.tau;
    let mut cells = Vec::new();
    let lo = |v: f64| ((v - radius) / grid.cell - 0.5).ceil().max(0.0);
    let hi = |v: f64, n: usize| ((v + radius) / grid.cell - 0.5).floor().min(n as f64 - 1.0);
    let (x0, x1) = (lo(center.x), hi(center.x, grid.nx));
    let (y0, y1) = (lo(center.y), hi(center.y, grid.ny));
    if x0 <= x1 && y0 <= y1 {
        for iy in y0 as usize..=y1 as usize {
            for ix in x0 as usize..=x1 as usize {
                let c = grid.index(ix, iy);
                if grid.center(c).distance(center) <= radius {
                    cells.push(c);
                }
            }
        }
    }
    if cells.is_empty() && distance_to_field(center) <= radius {
        cells.push(grid.cell_at(center));
    }
    Some(ReachableArea {
        tau: hit.tau,
        theta: hit.theta,
        center,
        radius,
        cells,
    })
}

/// Mean weighted control of `target` over its reachable area; 0 when no
/// pass can reach them.
pub fn v_frame(
    frame: &Frame,
    target: u8,
    timing: &TimingParams,
    control: &ControlParams,
    grid: &Grid,
) -> f64 {
    let player = frame.object(target);
    let Some(area) = reachable_area(player.pos, player.vel, frame.disc().pos, timing, grid) else {
        return 0.0;
    };
    if area.cells.is_empty() {
        return 0.0;
    }
    let field = wuppcf(frame, grid, &area.cells, control);
    let sum: f64 = (0..area.cells.len()).map(|k| field.wuppcf_at(k, target)).sum();
    sum / area.cells.len() as f64
}

/// Frame values of every attacker except the holder, by id.
pub fn team_frame_values(
    frame: &Frame,
    timing: &TimingParams,
    control: &ControlParams,
    grid: &Grid,
) -> Vec<(u8, f64)> {
    let holder = frame.holder().map(|h| h.id);
    frame
        .players(ObjectClass::Offense)
        .filter(|o| Some(o.id) != holder)
        .map(|o| (o.id, v_frame(frame, o.id, timing, control, grid)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMax {
    pub value: f64,
    /// Index of the first element of the best window.
    pub start: usize,
}

/// Best mean over windows `series[t+1..=t+window]`, taking the earliest on ties.
pub fn v_scenario(series: &[f64], window: usize) -> Result<WindowMax, TimingError> {
    if window == 0 || series.len() < window + 1 {
        return Err(TimingError::SpanTooShort {
            len: series.len(),
            window,
        });
    }
    let mut best = WindowMax {
        value: f64::NEG_INFINITY,
        start: 1,
    };
    for t in 0..series.len() - window {
        let mut sum = 0.0;
        for v in &series[t + 1..=t + window] {
            sum += v;
        }
        let mean = sum / window as f64;
        if mean > best.value {
            best = WindowMax {
                value: mean,
                start: t + 1,
            };
        }
    }
    Ok(best)
}

/// Actual-minus-best-counterfactual differential and the best shift.
///
/// `None` unless the unshifted scenario and at least one other are present.
pub fn v_timing(values: &[(i32, f64)]) -> Option<(f64, i32)> {
    let actual = values.iter().find(|(xi, _)| *xi == 0)?.1;
    let (best_xi, best) = values
        .iter()
        .filter(|(xi, _)| *xi != 0)
        .fold(None, |acc: Option<(i32, f64)>, &(xi, v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((xi, v)),
        })?;
    Some((actual - best, best_xi))
}

/// Frames scored for every scenario of a sequence: from the earliest shifted
/// onset less the offset, clipped to the possession, through the sequence end.
pub fn evaluation_span(
    table: &FrameTable,
    seq: &MovementSequence,
    params: &TimingParams,
) -> RangeInclusive<u32> {
    let back = MAX_SHIFT as u32 + params.eval_start_offset;
    let first = table
        .possession_of(seq.t0)
        .map_or(seq.start, |p| p.first_frame);
    seq.t0.saturating_sub(back).max(first)..=seq.end
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioValue {
    pub xi: i32,
    pub frames: Vec<u32>,
    pub v_frame: Vec<f64>,
    pub v_scenario: f64,
    pub argmax_frame: u32,
}

/// Scores `target` over `span` using `lookup` to fetch each frame.
pub fn evaluate_span<'a>(
    lookup: impl Fn(u32) -> Option<&'a Frame> + Sync,
    span: RangeInclusive<u32>,
    target: u8,
    xi: i32,
    timing: &TimingParams,
    control: &ControlParams,
    grid: &Grid,
) -> Result<ScenarioValue, TimingError> {
    let frames: Vec<u32> = span.collect();
    let v_frame = frames
        .iter()
        .map(|&t| {
            lookup(t)
                .map(|f| v_frame(f, target, timing, control, grid))
                .ok_or(TimingError::MissingFrame(t))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let best = v_scenario(&v_frame, timing.window)?;
    Ok(ScenarioValue {
        xi,
        argmax_frame: frames[best.start],
        v_scenario: best.value,
        frames,
        v_frame,
    })
}

/// Scores the recorded play itself, without building a scenario.
pub fn evaluate_actual(
    table: &FrameTable,
    seq: &MovementSequence,
    timing: &TimingParams,
    control: &ControlParams,
    grid: &Grid,
) -> Result<ScenarioValue, TimingError> {
    evaluate_span(
        |t| table.frame(t),
        evaluation_span(table, seq, timing),
        seq.player_id,
        0,
        timing,
        control,
        grid,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub schema_version: u32,
    pub sequence: MovementSequence,
    pub defender_id: Option<u8>,
    pub span: [u32; 2],
    pub xi_values: Vec<i32>,
    pub v_scenario: Vec<f64>,
    pub argmax_frame: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_timing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_xi: Option<i32>,
    #[serde(skip)]
    pub scenarios: Vec<ScenarioValue>,
}

impl TimingReport {
    /// Per-frame values as `xi,frame,v_frame` rows.
    pub fn write_frame_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "xi,frame,v_frame")?;
        for sc in &self.scenarios {
            for (f, v) in sc.frames.iter().zip(&sc.v_frame) {
                writeln!(out, "{},{},{:.9}", sc.xi, f, v)?;
            }
        }
        Ok(())
    }
}

/// Which shifts a sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    #[default]
    Full,
    /// Only the unshifted scenario; no differential is reported.
    ZeroOnly,
}

/// Builds and scores the shifted scenarios of one sequence.
///
/// Scenarios are scored in parallel and gathered in shift order, so the
/// report does not depend on the thread count.
pub fn sweep(
    table: &FrameTable,
    seq: &MovementSequence,
    rule: DefenderRule,
    mode: SweepMode,
    timing: &TimingParams,
    control: &ControlParams,
    grid: &Grid,
) -> Result<TimingReport, TimingError> {
    timing.validate()?;
    let defender = rule.resolve(table, seq);
    let span = evaluation_span(table, seq, timing);
    let shifts: Vec<ShiftParameter> = match mode {
        SweepMode::Full => ShiftParameter::sweep().collect(),
        SweepMode::ZeroOnly => vec![ShiftParameter::ZERO],
    };
    let scenarios = shifts
        .into_par_iter()
        .map(|xi| {
            let sc = shift_players(table, seq, xi, defender)?;
            evaluate_span(
                |t| sc.frame(t),
                span.clone(),
                seq.player_id,
                xi.get(),
                timing,
                control,
                grid,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(i32, f64)> = scenarios.iter().map(|s| (s.xi, s.v_scenario)).collect();
    let timing_value = match mode {
        SweepMode::Full => v_timing(&pairs),
        SweepMode::ZeroOnly => None,
    };
    Ok(TimingReport {
        schema_version: SCHEMA_VERSION,
        sequence: *seq,
        defender_id: defender,
        span: [*span.start(), *span.end()],
        xi_values: pairs.iter().map(|p| p.0).collect(),
        v_scenario: pairs.iter().map(|p| p.1).collect(),
        argmax_frame: scenarios.iter().map(|s| s.argmax_frame).collect(),
        v_timing: timing_value.map(|t| t.0),
        best_xi: timing_value.map(|t| t.1),
        scenarios,
    })
}
