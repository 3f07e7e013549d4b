//! Temporally shifted replays of a detected cut.
//!
//! For a shift `xi < 0` the cut is replayed `|xi|` frames early and translated
//! so it starts where the player stood at the new onset. For `xi > 0` the
//! player first coasts at their pre-cut mean velocity for `xi` frames and then
//! replays the cut translated by the coasted distance. Only the cutter and
//! their marking defender move; every other object keeps its recorded track.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataio::{differentiate, DataError, Frame, FrameTable};
use crate::detect::MovementSequence;
use crate::geom::Vec2;

pub const MAX_SHIFT: i32 = 15;
/// Frames averaged for the pre-cut mean velocity.
pub const MEAN_VELOCITY_FRAMES: u32 = 15;

#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error("shift {0} outside [-15, 15]")]
    ShiftOutOfRange(i32),
    #[error("shift {xi} moves the onset of frame {t0} before possession start {first}")]
    ShiftBeforePossession { xi: i32, t0: u32, first: u32 },
    #[error("frame {0} is not in the table")]
    UnknownFrame(u32),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Onset shift in frames; negative is earlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ShiftParameter(i32);

impl ShiftParameter {
    pub const ZERO: ShiftParameter = ShiftParameter(0);

    pub fn new(xi: i32) -> Result<Self, CounterfactualError> {
        if (-MAX_SHIFT..=MAX_SHIFT).contains(&xi) {
            Ok(Self(xi))
        } else {
            Err(CounterfactualError::ShiftOutOfRange(xi))
        }
    }

    pub fn get(self) -> i32 {
        self.0
    }

    /// All 31 shifts in ascending order.
    pub fn sweep() -> impl Iterator<Item = ShiftParameter> {
        (-MAX_SHIFT..=MAX_SHIFT).map(ShiftParameter)
    }
}

/// Mean velocity over the frames before an onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanVelocity {
    pub value: Vec2,
    /// Frames actually averaged; fewer than 15 near a possession start.
    pub frames_used: u32,
}

impl MeanVelocity {
    pub fn is_fallback(&self) -> bool {
        self.frames_used < MEAN_VELOCITY_FRAMES
    }
}

/// Mean of `v(t0 - k)` for `k = 1..=15`, limited to frames of the same possession.
pub fn mean_velocity(
    table: &FrameTable,
    player: u8,
    t0: u32,
) -> Result<MeanVelocity, CounterfactualError> {
    let poss = table
        .possession_of(t0)
        .ok_or(CounterfactualError::UnknownFrame(t0))?;
    let mut sum = Vec2::ZERO;
    let mut used = 0u32;
    for k in 1..=MEAN_VELOCITY_FRAMES {
        let Some(t) = t0.checked_sub(k).filter(|&t| t >= poss.first_frame) else {
            break;
        };
        sum += table.frame(t).expect("inside possession").object(player).vel;
        used += 1;
    }
    let value = if used == 0 {
        Vec2::ZERO
    } else {
        sum / f64::from(used)
    };
    Ok(MeanVelocity {
        value,
        frames_used: used,
    })
}

/// Which piece of the shifted trajectory a frame falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    Original,
    GapFill,
    Replay,
}

/// The shifted track of one player, with the original for reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedTrack {
    pub id: u8,
    pub vbar: MeanVelocity,
    /// Translation added to the replayed cut.
    pub correction: Vec2,
    xi: i32,
    /// Index of the onset within the possession.
    onset: usize,
    fps: f64,
    original: Vec<Vec2>,
}

impl ShiftedTrack {
    fn new(
        original: Vec<Vec2>,
        id: u8,
        onset: usize,
        xi: i32,
        vbar: MeanVelocity,
        fps: f64,
    ) -> Self {
        let correction = if xi < 0 {
            let s = xi.unsigned_abs() as usize;
            original[onset - s] - original[onset]
        } else {
            vbar.value * (f64::from(xi) / fps)
        };
        Self {
            id,
            vbar,
            correction,
            xi,
            onset,
            fps,
            original,
        }
    }

    fn piece(&self, k: usize) -> Piece {
        let (k, t0) = (k as i64, self.onset as i64);
        let xi = i64::from(self.xi);
        if self.xi == 0 {
            Piece::Original
        } else if self.xi < 0 {
            if k <= t0 + xi {
                Piece::Original
            } else {
                Piece::Replay
            }
        } else if k <= t0 {
            Piece::Original
        } else if k <= t0 + xi {
            Piece::GapFill
        } else {
            Piece::Replay
        }
    }

    /// Evaluates one piece's formula at possession index `k`.
    fn eval(&self, piece: Piece, k: usize) -> Vec2 {
        match piece {
            Piece::Original => self.original[k],
            Piece::GapFill => {
                let steps = k as f64 - self.onset as f64;
                self.original[self.onset] + self.vbar.value * (steps / self.fps)
            }
            Piece::Replay => {
                let src = (k as i64 - i64::from(self.xi)) as usize;
                // Past the recorded track the replay holds its last position.
                let src = src.min(self.original.len() - 1);
                self.original[src] + self.correction
            }
        }
    }

    pub fn position(&self, k: usize) -> Vec2 {
        self.eval(self.piece(k), k)
    }

    pub fn positions(&self) -> Vec<Vec2> {
        (0..self.original.len()).map(|k| self.position(k)).collect()
    }

    /// Index of the first frame whose position differs from the original.
    fn first_changed(&self) -> Option<usize> {
        match self.xi {
            0 => None,
            xi if xi < 0 => Some((self.onset as i64 + i64::from(xi) + 1) as usize),
            _ => Some(self.onset + 1),
        }
    }

    /// Position mismatch between adjacent pieces, evaluated at each boundary frame.
    pub fn boundary_gaps(&self) -> Vec<f64> {
        let n = self.original.len();
        let mut boundaries = Vec::new();
        if self.xi < 0 {
            let b = (self.onset as i64 + i64::from(self.xi)) as usize;
            boundaries.push((b, Piece::Original, Piece::Replay));
        } else if self.xi > 0 {
            let t0 = self.onset;
            boundaries.push((t0, Piece::Original, Piece::GapFill));
            let b = t0 + self.xi as usize;
            if b < n {
                boundaries.push((b, Piece::GapFill, Piece::Replay));
            }
        }
        boundaries
            .into_iter()
            .map(|(k, before, after)| (self.eval(after, k) - self.eval(before, k)).norm())
            .collect()
    }
}

/// One counterfactual replay of a possession.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualScenario {
    pub xi: ShiftParameter,
    pub sequence: MovementSequence,
    pub target_id: u8,
    pub defender_id: Option<u8>,
    /// Shifted tracks of the target and (if any) the defender.
    pub tracks: Vec<ShiftedTrack>,
    frames: Vec<Frame>,
}

impl CounterfactualScenario {
    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, index: u32) -> Option<&Frame> {
        let first = self.frames.first()?.index;
        index
            .checked_sub(first)
            .and_then(|k| self.frames.get(k as usize))
    }

    pub fn vbar(&self) -> MeanVelocity {
        self.tracks[0].vbar
    }

    pub fn boundary_gaps(&self) -> Vec<f64> {
        self.tracks.iter().flat_map(|t| t.boundary_gaps()).collect()
    }
}

/// How the defender shifted alongside the cutter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DefenderRule {
    /// The cutter's `closest` pairing at the onset frame.
    #[default]
    ClosestAtOnset,
    Fixed(u8),
    /// Shift the cutter alone.
    NoDefender,
}

impl DefenderRule {
    pub fn resolve(self, table: &FrameTable, seq: &MovementSequence) -> Option<u8> {
        match self {
            DefenderRule::ClosestAtOnset => table
                .frame(seq.t0)
                .and_then(|f| f.object(seq.player_id).closest),
            DefenderRule::Fixed(id) => Some(id),
            DefenderRule::NoDefender => None,
        }
    }
}

fn check_shift(table: &FrameTable, seq: &MovementSequence, xi: i32) -> Result<(), CounterfactualError> {
    let poss = table
        .possession_of(seq.t0)
        .ok_or(CounterfactualError::UnknownFrame(seq.t0))?;
    if i64::from(seq.t0) + i64::from(xi) < i64::from(poss.first_frame) {
        return Err(CounterfactualError::ShiftBeforePossession {
            xi,
            t0: seq.t0,
            first: poss.first_frame,
        });
    }
    Ok(())
}

/// Builds the scenario for one shift, moving `target` and `defender` together.
pub fn shift_players(
    table: &FrameTable,
    seq: &MovementSequence,
    xi: ShiftParameter,
    defender: Option<u8>,
) -> Result<CounterfactualScenario, CounterfactualError> {
    check_shift(table, seq, xi.get())?;
    let poss = *table
        .possession_of(seq.t0)
        .ok_or(CounterfactualError::UnknownFrame(seq.t0))?;
    let onset = (seq.t0 - poss.first_frame) as usize;
    let fps = table.fps();
    let mut frames = table.possession_frames(poss.id).to_vec();
    let mut tracks = Vec::new();
    for id in std::iter::once(seq.player_id).chain(defender) {
        let vbar = mean_velocity(table, id, seq.t0)?;
        let track = ShiftedTrack::new(table.positions(poss.id, id), id, onset, xi.get(), vbar, fps);
        if let Some(changed) = track.first_changed() {
            let pos = track.positions();
            let vel = differentiate(&pos, 1.0 / fps);
            let acc = differentiate(&vel, 1.0 / fps);
            // Derivatives are refreshed wherever their stencil touches a moved frame.
            let v_from = changed.saturating_sub(1);
            let a_from = changed.saturating_sub(2);
            for (k, frame) in frames.iter_mut().enumerate() {
                let o = frame.object_mut(id);
                o.pos = pos[k];
                if k >= v_from {
                    o.vel = vel[k];
                }
                if k >= a_from {
                    o.acc = acc[k];
                }
            }
        }
        tracks.push(track);
    }
    Ok(CounterfactualScenario {
        xi,
        sequence: *seq,
        target_id: seq.player_id,
        defender_id: defender,
        tracks,
        frames,
    })
}

/// Earlier onset (`xi < 0`) for the cutter alone.
pub fn shift_early(
    table: &FrameTable,
    seq: &MovementSequence,
    xi: ShiftParameter,
) -> Result<CounterfactualScenario, CounterfactualError> {
    debug_assert!(xi.get() <= 0);
    shift_players(table, seq, xi, None)
}

/// Delayed onset (`xi > 0`) for the cutter alone.
pub fn shift_late(
    table: &FrameTable,
    seq: &MovementSequence,
    xi: ShiftParameter,
) -> Result<CounterfactualScenario, CounterfactualError> {
    debug_assert!(xi.get() >= 0);
    shift_players(table, seq, xi, None)
}

/// All 31 scenarios for `xi = -15..=15`, cutter and defender shifted together.
pub fn build_sweep(
    table: &FrameTable,
    seq: &MovementSequence,
    rule: DefenderRule,
) -> Result<Vec<CounterfactualScenario>, CounterfactualError> {
    let defender = rule.resolve(table, seq);
    ShiftParameter::sweep()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|xi| shift_players(table, seq, xi, defender))
        .collect()
}

/// Writes scenarios in the tracking CSV layout with a trailing `xi` column.
pub fn write_scenarios_csv<W: Write>(
    scenarios: &[CounterfactualScenario],
    writer: W,
) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<&str> = crate::dataio::CSV_HEADER.to_vec();
    header.push("xi");
    wtr.write_record(&header)?;
    for sc in scenarios {
        for frame in sc.frames() {
            for s in frame.objects() {
                wtr.write_record([
                    s.frame.to_string(),
                    s.id.to_string(),
                    s.class.to_string(),
                    format!("{:.3}", s.pos.x),
                    format!("{:.3}", s.pos.y),
                    format!("{:.3}", s.vel.x),
                    format!("{:.3}", s.vel.y),
                    format!("{:.3}", s.acc.x),
                    format!("{:.3}", s.acc.y),
                    s.closest.map(|c| c.to_string()).unwrap_or_default(),
                    s.holder.to_string(),
                    sc.xi.get().to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::formation_table;

    const CUTTER: u8 = 4;

    /// Cutter stands still until frame 5, then runs +x at 1 m per frame.
    fn stand_then_run() -> FrameTable {
        formation_table(10, |s| {
            if s.id == CUTTER {
                let f = f64::from(s.frame);
                s.pos = Vec2::new(30.0 + (f - 5.0).max(0.0), 10.0);
                s.vel = if s.frame >= 5 { Vec2::new(15.0, 0.0) } else { Vec2::ZERO };
            }
        })
    }

    fn xi(v: i32) -> ShiftParameter {
        ShiftParameter::new(v).unwrap()
    }

    #[test]
    fn shift_range_checked() {
        assert!(ShiftParameter::new(16).is_err());
        assert!(ShiftParameter::new(-16).is_err());
        assert_eq!(ShiftParameter::sweep().count(), 31);
    }

    #[test]
    fn constant_and_zero_mean_velocity() {
        let t = formation_table(30, |s| {
            if s.id == CUTTER {
                s.vel = Vec2::new(2.0, 0.0);
            }
        });
        let m = mean_velocity(&t, CUTTER, 20).unwrap();
        assert_eq!(m.value, Vec2::new(2.0, 0.0));
        assert!(!m.is_fallback());
        assert_eq!(mean_velocity(&t, 5, 20).unwrap().value, Vec2::ZERO);
    }

    #[test]
    fn alternating_mean_velocity_matches_summation() {
        let t = formation_table(30, |s| {
            if s.id == CUTTER {
                let x = if s.frame % 2 == 0 { 1.0 } else { 3.0 };
                s.vel = Vec2::new(x, 0.0);
            }
        });
        // Frames 5..=19: 8 odd (3.0) and 7 even (1.0).
        let expected = (8.0 * 3.0 + 7.0 * 1.0) / 15.0;
        let m = mean_velocity(&t, CUTTER, 20).unwrap();
        assert!((m.value.x - expected).abs() < 1e-15);
        assert!((1.0..=3.0).contains(&m.value.x));
    }

    #[test]
    fn short_history_falls_back() {
        let t = formation_table(30, |s| {
            if s.id == CUTTER {
                s.vel = Vec2::new(0.0, 1.0);
            }
        });
        let m = mean_velocity(&t, CUTTER, 4).unwrap();
        assert_eq!(m.frames_used, 4);
        assert!(m.is_fallback());
        assert_eq!(m.value, Vec2::new(0.0, 1.0));
    }

    #[test]
    fn early_by_one_frame() {
        let t = stand_then_run();
        let seq = MovementSequence::at(0, CUTTER, 5);
        let sc = shift_early(&t, &seq, xi(-1)).unwrap();
        let xs: Vec<f64> = sc.frames().iter().map(|f| f.object(CUTTER).pos.x).collect();
        // Hand computed: run starts after frame 4, replay held at the end.
        assert_eq!(xs, vec![30.0, 30.0, 30.0, 30.0, 30.0, 31.0, 32.0, 33.0, 34.0, 34.0]);
        assert!(sc.boundary_gaps().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_shift_is_identity() {
        let t = stand_then_run();
        let seq = MovementSequence::at(0, CUTTER, 5);
        let sc = shift_early(&t, &seq, ShiftParameter::ZERO).unwrap();
        assert_eq!(sc.frames(), t.possession_frames(0));
    }

    #[test]
    fn early_before_possession_rejected() {
        let t = stand_then_run();
        let seq = MovementSequence::at(0, CUTTER, 5);
        assert!(matches!(
            shift_early(&t, &seq, xi(-6)),
            Err(CounterfactualError::ShiftBeforePossession { .. })
        ));
    }

    #[test]
    fn late_with_zero_mean_velocity_waits_then_replays() {
        let t = stand_then_run();
        let seq = MovementSequence::at(0, CUTTER, 5);
        let sc = shift_late(&t, &seq, xi(2)).unwrap();
        let xs: Vec<f64> = sc.frames().iter().map(|f| f.object(CUTTER).pos.x).collect();
        assert_eq!(xs, vec![30.0, 30.0, 30.0, 30.0, 30.0, 30.0, 30.0, 30.0, 31.0, 32.0]);
        assert_eq!(sc.tracks[0].correction, Vec2::ZERO);
    }

    #[test]
    fn late_gap_fill_advances_at_mean_velocity() {
        let t = formation_table(40, |s| {
            if s.id == CUTTER {
                let f = f64::from(s.frame);
                s.vel = Vec2::new(1.0, 0.0);
                s.pos = Vec2::new(30.0 + f / 15.0, 10.0);
            }
        });
        let seq = MovementSequence::at(0, CUTTER, 20);
        let sc = shift_late(&t, &seq, xi(3)).unwrap();
        let track = &sc.tracks[0];
        // Independent recomputation: 3 frames at 1 m/s and 15 fps.
        assert!((track.correction.x - 0.2).abs() < 1e-15);
        let p0 = 30.0 + 20.0 / 15.0;
        for k in 1..=3u32 {
            let x = sc.frame(20 + k).unwrap().object(CUTTER).pos.x;
            assert!((x - (p0 + f64::from(k) / 15.0)).abs() < 1e-12);
        }
        assert!(sc.boundary_gaps().iter().all(|&g| g < 1e-12));
    }

    #[test]
    fn sweep_keeps_bystanders_and_identity() {
        let t = formation_table(60, |s| {
            if s.id == CUTTER || s.id == CUTTER + 7 {
                let f = f64::from(s.frame.saturating_sub(30));
                s.pos.x += 0.3 * f;
                s.vel = Vec2::new(if s.frame >= 30 { 4.5 } else { 0.0 }, 0.0);
            }
        });
        let seq = MovementSequence::at(0, CUTTER, 30);
        let sweep = build_sweep(&t, &seq, DefenderRule::ClosestAtOnset).unwrap();
        assert_eq!(sweep.len(), 31);
        let original = t.possession_frames(0);
        for sc in &sweep {
            assert_eq!(sc.defender_id, Some(CUTTER + 7));
            for (a, b) in sc.frames().iter().zip(original) {
                for id in (1..=15u8).filter(|&id| id != CUTTER && id != CUTTER + 7) {
                    assert_eq!(a.object(id), b.object(id));
                }
            }
        }
        assert_eq!(sweep[15].xi, ShiftParameter::ZERO);
        assert_eq!(sweep[15].frames(), original);
    }

    #[test]
    fn scenario_csv_has_xi_column() {
        let t = stand_then_run();
        let seq = MovementSequence::at(0, CUTTER, 5);
        let sc = shift_late(&t, &seq, xi(1)).unwrap();
        let mut buf = Vec::new();
        write_scenarios_csv(&[sc], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("frame,id,class,x,y,vx,vy,ax,ay,closest,holder,xi\n"));
        assert_eq!(text.lines().count(), 1 + 10 * 15);
        assert!(text.lines().nth(1).unwrap().ends_with(",1"));
    }
}
