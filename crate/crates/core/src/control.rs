//! Pitch control adapted to Ultimate, with pass-feasibility weights.
//!
//! Control at a location is the outcome of a race: each player's chance of
//! having arrived by time `T` is a logistic in `T` around their expected
//! arrival, and control accrues at rate `lambda` on whatever share is still
//! uncontested. The Ultimate variant drops the thrower and any stalling
//! defender from the race and derives each player's reaction time from how
//! well they are oriented toward the disc. The weighted field further
//! discounts long passes and lanes screened by the marker's arms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Frame, ObjectClass, ObjectState};
use crate::geom::{angle_between, segment_intersection, Vec2, FIELD_LENGTH, FIELD_WIDTH};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ControlError {
    #[error("unknown layer `{0}` (expected ppcf, uppcf, wuppcf, wd or ws)")]
    UnknownLayer(String),
    #[error("invalid control parameter: {0}")]
    BadParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ArmOrientation {
    /// Arms cross the disc-to-target line at a right angle.
    #[default]
    PerpendicularToPass,
    /// Arms are perpendicular to the marker's own velocity.
    PerpendicularToMarkerVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlParams {
    /// Control rate, 1/s.
    pub lambda: f64,
    /// Top running speed, m/s.
    pub v_max: f64,
    /// Spread of arrival times, s.
    pub sigma_arrival: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Integration horizon, s.
    pub t_max: f64,
    /// Controlled share at which integration stops.
    pub convergence: f64,
    pub stall_radius: f64,
    /// Disc-to-target distance at which the marker's arms vanish, m.
    pub arm_scale: f64,
    pub arm_orientation: ArmOrientation,
    /// Decay length of the pass-distance weight, m.
    pub wd_scale: f64,
    /// Lower bound of the screen weight.
    pub screen_floor: f64,
    /// Below this speed a player's heading is undefined, m/s.
    pub heading_speed_min: f64,
    /// Reaction time of the unmodified model, s.
    pub classic_reaction_time: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            lambda: 4.3,
            v_max: 5.0,
            sigma_arrival: 0.45,
            dt: 0.04,
            t_max: 10.0,
            convergence: 0.99,
            stall_radius: 3.0,
            arm_scale: 30.0,
            arm_orientation: ArmOrientation::PerpendicularToPass,
            wd_scale: 20.0,
            screen_floor: 0.05,
            heading_speed_min: 0.1,
            classic_reaction_time: 0.7,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        let positive = [
            self.lambda,
            self.v_max,
            self.sigma_arrival,
            self.dt,
            self.t_max,
            self.stall_radius,
            self.arm_scale,
            self.wd_scale,
            self.screen_floor,
            self.classic_reaction_time,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(ControlError::BadParams("all parameters must be positive and finite"));
        }
        if self.dt >= self.t_max {
            return Err(ControlError::BadParams("dt must be smaller than t_max"));
        }
        if !(self.convergence > 0.0 && self.convergence <= 1.0) {
            return Err(ControlError::BadParams("convergence must be in (0, 1]"));
        }
        Ok(())
    }

    /// Slope of the arrival logistic, 1/s.
    fn logistic_slope(&self) -> f64 {
        PI / (3f64.sqrt() * self.sigma_arrival)
    }
}

/// Square evaluation grid anchored at the field corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        Self {
            cell,
            nx: (FIELD_LENGTH / cell).ceil() as usize,
            ny: (FIELD_WIDTH / cell).ceil() as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index, x fastest.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    pub fn center(&self, index: usize) -> Vec2 {
        let (ix, iy) = self.coords(index);
        Vec2::new((ix as f64 + 0.5) * self.cell, (iy as f64 + 0.5) * self.cell)
    }

    /// Cell containing `p`, clamped into the grid.
    pub fn cell_at(&self, p: Vec2) -> usize {
        let ix = ((p.x / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = ((p.y / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        self.index(ix, iy)
    }

    pub fn all_cells(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::new(1.0)
    }
}

/// Reaction angle in `[0, π]` for the Ultimate model.
///
/// Offense: angle between the direction to the disc and the velocity.
/// Defense: the smaller of that and the angle between the direction to the
/// disc and the direction to the marked attacker. A player slower than
/// `heading_speed_min` has no heading and gets the worst case `π` for the
/// velocity term.
pub fn reaction_angle(
    player: &ObjectState,
    disc: Vec2,
    marked: Option<Vec2>,
    params: &ControlParams,
) -> f64 {
    let to_disc = disc - player.pos;
    if to_disc.normalized().is_none() {
        return 0.0;
    }
    let velocity_term = if player.vel.norm() < params.heading_speed_min {
        PI
    } else {
        angle_between(to_disc, player.vel).unwrap_or(PI)
    };
    match (player.class, marked) {
        (ObjectClass::Defense, Some(m)) => match angle_between(to_disc, m - player.pos) {
            Some(mark_term) => velocity_term.min(mark_term),
            None => velocity_term,
        },
        _ => velocity_term,
    }
}

/// Reaction time `0.1 + angle / π` seconds; always in `[0.1, 1.1]`.
pub fn reaction_time_from_angle(angle: f64) -> f64 {
    0.1 + angle.clamp(0.0, PI) / PI
}

pub fn reaction_time(
    player: &ObjectState,
    disc: Vec2,
    marked: Option<Vec2>,
    params: &ControlParams,
) -> f64 {
    reaction_time_from_angle(reaction_angle(player, disc, marked, params))
}

/// A participant in the control race.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Racer {
    pub id: u8,
    pub pos: Vec2,
    pub vel: Vec2,
    pub reaction_time: f64,
}

impl Racer {
    /// Expected arrival time at `target`: react while drifting, then run at top speed.
    pub fn arrival_time(&self, target: Vec2, params: &ControlParams) -> f64 {
        let after_reaction = self.pos + self.vel * self.reaction_time;
        self.reaction_time + after_reaction.distance(target) / params.v_max
    }
}

/// Probability the racer has reached `target` within `t` seconds.
pub fn arrival_probability(racer: &Racer, target: Vec2, t: f64, params: &ControlParams) -> f64 {
    let tau = racer.arrival_time(target, params);
    1.0 / (1.0 + (-params.logistic_slope() * (t - tau)).exp())
}

/// Per-racer control at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct CellControl {
    pub values: Vec<f64>,
    pub converged: bool,
}

impl CellControl {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Forward-Euler integration of the control race at `target`.
///
/// When a step would push the total above one, the step's increments are
/// scaled down proportionally so the total lands exactly on one.
pub fn integrate_ppcf(racers: &[Racer], target: Vec2, params: &ControlParams) -> CellControl {
    let n = racers.len();
    let mut values = vec![0.0; n];
    if n == 0 {
        return CellControl {
            values,
            converged: false,
        };
    }
    let slope = params.logistic_slope();
    let steps = (params.t_max / params.dt).round() as usize;
    let decay = (-slope * params.dt).exp();
    // e[i] = exp(-slope * (T - tau_i)); f_i = 1 / (1 + e[i]).
    let mut e: Vec<f64> = racers
        .iter()
        .map(|r| (-slope * (params.dt - r.arrival_time(target, params))).exp())
        .collect();
    let mut inc = vec![0.0; n];
    let mut total = 0.0;
    let rate = params.lambda * params.dt;
    let mut converged = false;
    for _ in 0..steps {
        let free = 1.0 - total;
        let gain = free * rate;
        for (d, &ei) in inc.iter_mut().zip(&e) {
            *d = gain / (1.0 + ei);
        }
        let mut step_sum = 0.0;
        for d in &inc {
            step_sum += d;
        }
        if step_sum > free {
            let scale = free / step_sum;
            for d in inc.iter_mut() {
                *d *= scale;
            }
            step_sum = free;
        }
        for (v, d) in values.iter_mut().zip(&inc) {
            *v = (*v + d).clamp(0.0, 1.0);
        }
        total += step_sum;
        if total >= params.convergence {
            converged = true;
            break;
        }
        for ei in e.iter_mut() {
            *ei *= decay;
        }
    }
    CellControl { values, converged }
}

/// Ids of players that take part in the Ultimate control race: everyone but
/// the disc holder and defenders within the stall radius of the holder.
pub fn uppcf_filter(frame: &Frame, stall_radius: f64) -> Vec<u8> {
    let holder = frame.holder();
    frame
        .objects()
        .iter()
        .filter(|o| o.class.is_player())
        .filter(|o| match holder {
            None => true,
            Some(h) if o.id == h.id => false,
            Some(h) => !(o.class == ObjectClass::Defense && o.pos.distance(h.pos) <= stall_radius),
        })
        .map(|o| o.id)
        .collect()
}

/// Weight for pass distance: `exp(-d / wd_scale)`.
pub fn distance_weight(cell: Vec2, disc: Vec2, params: &ControlParams) -> f64 {
    (-cell.distance(disc) / params.wd_scale).exp()
}

/// Half-length of the marker's virtual arms for a pass of this length.
pub fn arm_length(pass_length: f64, arm_scale: f64) -> f64 {
    1.0 - (pass_length / arm_scale).min(1.0)
}

/// The defender whose arms screen passes: nearest to the holder, or to the
/// disc while it is in the air.
pub fn marker(frame: &Frame) -> Option<&ObjectState> {
    let anchor = frame.holder().map_or(frame.disc().pos, |h| h.pos);
    frame
        .players(ObjectClass::Defense)
        .min_by(|a, b| {
            a.pos
                .distance(anchor)
                .total_cmp(&b.pos.distance(anchor))
                .then(a.id.cmp(&b.id))
        })
}

/// Screen weight for a pass from `disc` to `cell` past a marker.
///
/// If the pass segment crosses the arms, the weight is the marker-to-crossing
/// distance over the arm length, floored at `screen_floor`; otherwise 1.
pub fn screen_weight(
    cell: Vec2,
    disc: Vec2,
    marker_pos: Vec2,
    marker_vel: Vec2,
    params: &ControlParams,
) -> f64 {
    let pass = cell - disc;
    let Some(pass_dir) = pass.normalized() else {
        return 1.0;
    };
    let r = arm_length(pass.norm(), params.arm_scale);
    if r <= 0.0 {
        return 1.0;
    }
    let arm_dir = match params.arm_orientation {
        ArmOrientation::PerpendicularToPass => pass_dir.perp(),
        ArmOrientation::PerpendicularToMarkerVelocity => marker_vel
            .normalized()
            .map_or(pass_dir.perp(), Vec2::perp),
    };
    let a0 = marker_pos - arm_dir * r;
    let a1 = marker_pos + arm_dir * r;
    match segment_intersection(disc, cell, a0, a1) {
        Some(q) => (marker_pos.distance(q) / r).clamp(params.screen_floor, 1.0),
        None => 1.0,
    }
}

/// Racers for the Ultimate model at this frame.
pub fn ultimate_racers(frame: &Frame, params: &ControlParams) -> Vec<Racer> {
    let disc = frame.disc().pos;
    uppcf_filter(frame, params.stall_radius)
        .into_iter()
        .map(|id| {
            let o = frame.object(id);
            let marked = o.closest.map(|c| frame.object(c).pos);
            Racer {
                id,
                pos: o.pos,
                vel: o.vel,
                reaction_time: reaction_time(o, disc, marked, params),
            }
        })
        .collect()
}

/// Racers for the unmodified model: every player, fixed reaction time.
pub fn classic_racers(frame: &Frame, params: &ControlParams) -> Vec<Racer> {
    frame
        .objects()
        .iter()
        .filter(|o| o.class.is_player())
        .map(|o| Racer {
            id: o.id,
            pos: o.pos,
            vel: o.vel,
            reaction_time: params.classic_reaction_time,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Ppcf,
    Uppcf,
    Wuppcf,
    #[serde(rename = "wd")]
    DistanceWeight,
    #[serde(rename = "ws")]
    ScreenWeight,
}

impl Layer {
    pub const ALL: [Layer; 5] = [
        Layer::Ppcf,
        Layer::Uppcf,
        Layer::Wuppcf,
        Layer::DistanceWeight,
        Layer::ScreenWeight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Ppcf => "ppcf",
            Layer::Uppcf => "uppcf",
            Layer::Wuppcf => "wuppcf",
            Layer::DistanceWeight => "wd",
            Layer::ScreenWeight => "ws",
        }
    }

    pub fn is_per_player(self) -> bool {
        matches!(self, Layer::Ppcf | Layer::Uppcf | Layer::Wuppcf)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Layer::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ControlError::UnknownLayer(s.to_string()))
    }
}

/// Control layers over a set of grid cells for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub frame: u32,
    pub grid: Grid,
    /// Evaluated grid cells, in the order given.
    pub cells: Vec<usize>,
    /// Racers, in `uppcf` column order.
    pub players: Vec<u8>,
    /// Row per cell, column per racer.
    pub uppcf: Vec<f64>,
    pub distance_weight: Vec<f64>,
    pub screen_weight: Vec<f64>,
    pub converged: Vec<bool>,
}

impl ControlField {
    fn column(&self, id: u8) -> Option<usize> {
        self.players.iter().position(|&p| p == id)
    }

    /// UPPCF of `id` at the `k`-th evaluated cell (0 for non-racers).
    pub fn uppcf_at(&self, k: usize, id: u8) -> f64 {
        self.column(id)
            .map_or(0.0, |c| self.uppcf[k * self.players.len() + c])
    }

    pub fn wuppcf_at(&self, k: usize, id: u8) -> f64 {
        self.uppcf_at(k, id) * self.distance_weight[k] * self.screen_weight[k]
    }

    /// Sum of UPPCF over all racers at the `k`-th cell.
    pub fn total_at(&self, k: usize) -> f64 {
        let n = self.players.len();
        self.uppcf[k * n..(k + 1) * n].iter().sum()
    }

    /// wUPPCF of one player across the evaluated cells.
    pub fn wuppcf_layer(&self, id: u8) -> Vec<f64> {
        (0..self.cells.len()).map(|k| self.wuppcf_at(k, id)).collect()
    }
}

/// Weighted Ultimate control field of `frame` over `cells`.
pub fn wuppcf(frame: &Frame, grid: &Grid, cells: &[usize], params: &ControlParams) -> ControlField {
    let racers = ultimate_racers(frame, params);
    let disc = frame.disc().pos;
    let marker = marker(frame).map(|m| (m.pos, m.vel));
    let per_cell: Vec<(CellControl, f64, f64)> = cells
        .par_iter()
        .with_min_len(64)
        .map(|&c| {
            let target = grid.center(c);
            let control = integrate_ppcf(&racers, target, params);
            let wd = distance_weight(target, disc, params);
            let ws = marker.map_or(1.0, |(p, v)| screen_weight(target, disc, p, v, params));
            (control, wd, ws)
        })
        .collect();
    let mut field = ControlField {
        frame: frame.index,
        grid: *grid,
        cells: cells.to_vec(),
        players: racers.iter().map(|r| r.id).collect(),
        uppcf: Vec::with_capacity(cells.len() * racers.len()),
        distance_weight: Vec::with_capacity(cells.len()),
        screen_weight: Vec::with_capacity(cells.len()),
        converged: Vec::with_capacity(cells.len()),
    };
    for (control, wd, ws) in per_cell {
        field.uppcf.extend(control.values);
        field.distance_weight.push(wd);
        field.screen_weight.push(ws);
        field.converged.push(control.converged);
    }
    field
}

/// Unmodified pitch control: every player races with the classic reaction time.
///
/// Returns one row per cell, one column per player id 1-14.
pub fn ppcf_field(frame: &Frame, grid: &Grid, cells: &[usize], params: &ControlParams) -> (Vec<u8>, Vec<f64>) {
    let racers = classic_racers(frame, params);
    let values: Vec<f64> = cells
        .par_iter()
        .with_min_len(64)
        .flat_map_iter(|&c| integrate_ppcf(&racers, grid.center(c), params).values)
        .collect();
    (racers.iter().map(|r| r.id).collect(), values)
}

/// Scalar map of one layer over `cells`.
///
/// Per-player layers use `player` when given, otherwise the sum over the
/// offense team (bounded by 1 since shares never exceed 1 in total).
pub fn layer_values(
    frame: &Frame,
    grid: &Grid,
    cells: &[usize],
    layer: Layer,
    player: Option<u8>,
    params: &ControlParams,
) -> Vec<f64> {
    let offense: Vec<u8> = frame.players(ObjectClass::Offense).map(|o| o.id).collect();
    let ids: Vec<u8> = player.map_or(offense, |p| vec![p]);
    match layer {
        Layer::Ppcf => {
            let (players, values) = ppcf_field(frame, grid, cells, params);
            let cols: Vec<usize> = ids
                .iter()
                .filter_map(|id| players.iter().position(|p| p == id))
                .collect();
            values
                .chunks(players.len())
                .map(|row| cols.iter().map(|&c| row[c]).sum())
                .collect()
        }
        Layer::DistanceWeight => {
            let disc = frame.disc().pos;
            cells
                .iter()
                .map(|&c| distance_weight(grid.center(c), disc, params))
                .collect()
        }
        Layer::ScreenWeight => {
            let disc = frame.disc().pos;
            let m = marker(frame).map(|m| (m.pos, m.vel));
            cells
                .iter()
                .map(|&c| m.map_or(1.0, |(p, v)| screen_weight(grid.center(c), disc, p, v, params)))
                .collect()
        }
        Layer::Uppcf | Layer::Wuppcf => {
            let field = wuppcf(frame, grid, cells, params);
            (0..cells.len())
                .map(|k| {
                    ids.iter()
                        .map(|&id| {
                            if layer == Layer::Uppcf {
                                field.uppcf_at(k, id)
                            } else {
                                field.wuppcf_at(k, id)
                            }
                        })
                        .sum()
                })
                .collect()
        }
    }
}
