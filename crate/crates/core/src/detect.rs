//! Rule-based detection of receiver cuts.
//!
//! An initiation is an offense frame with strong acceleration along the
//! direction of travel by a player who has not held the disc recently. Each
//! initiation is grown forward while the run stays fast and straight, grown
//! backward while the player was already speeding up, and finally dropped
//! when it ends in a crowd or with teammates ahead.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataio::{DataError, FrameTable, ObjectClass, ObjectState};
use crate::geom::{angle_between, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Minimum acceleration magnitude at initiation, m/s².
    pub accel_min: f64,
    /// Frames before initiation during which the player must not hold the disc.
    pub no_hold_frames: u32,
    /// Maximum angle between velocity and acceleration at initiation, degrees.
    pub init_angle_max: f64,
    pub fwd_speed_min: f64,
    /// Maximum frame-to-frame change of running direction, degrees.
    pub fwd_turn_max: f64,
    /// Maximum deviation from the sequence's mean direction, degrees.
    pub fwd_mean_dev_max: f64,
    pub bwd_speed_min: f64,
    /// Largest tolerated speed drop into the next frame while extending backward, m/s.
    pub bwd_decel_max: f64,
    pub excl_radius: f64,
    /// Full aperture of the forward cone, degrees.
    pub excl_cone: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            accel_min: 4.0,
            no_hold_frames: 30,
            init_angle_max: 90.0,
            fwd_speed_min: 3.0,
            fwd_turn_max: 20.0,
            fwd_mean_dev_max: 90.0,
            bwd_speed_min: 0.05,
            bwd_decel_max: 0.05,
            excl_radius: 5.0,
            excl_cone: 90.0,
        }
    }
}

/// One detected cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovementSequence {
    pub possession_id: u32,
    pub player_id: u8,
    pub start: u32,
    pub t0: u32,
    pub end: u32,
}

impl MovementSequence {
    pub fn at(possession_id: u32, player_id: u8, t0: u32) -> Self {
        Self {
            possession_id,
            player_id,
            start: t0,
            t0,
            end: t0,
        }
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<u32> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Initiation {
    pub possession_id: u32,
    pub player_id: u8,
    pub t0: u32,
}

/// Result of the crowding checks at the end of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExclusionOutcome {
    pub retained: bool,
    /// Teammates within the exclusion radius.
    pub nearby: usize,
    /// Teammates inside the forward cone; `None` when the player is not moving.
    pub in_cone: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectedSequence {
    pub sequence: MovementSequence,
    pub exclusion: ExclusionOutcome,
}

impl DetectedSequence {
    pub fn retained(&self) -> bool {
        self.exclusion.retained
    }
}

fn state(table: &FrameTable, frame: u32, id: u8) -> Option<&ObjectState> {
    table.frame(frame).map(|f| f.object(id))
}

fn holds(table: &FrameTable, frame: u32, id: u8) -> bool {
    state(table, frame, id).is_some_and(|s| s.holder)
}

fn within_deg(angle: Option<f64>, max_deg: f64) -> bool {
    // An undefined direction (zero vector) cannot violate a direction limit.
    angle.is_none_or(|a| a.to_degrees() <= max_deg)
}

/// Whether `(player, frame)` meets every initiation criterion.
pub fn is_initiation(table: &FrameTable, frame: u32, player: u8, cfg: &DetectionConfig) -> bool {
    let Some(s) = state(table, frame, player) else {
        return false;
    };
    if s.class != ObjectClass::Offense || s.acc.norm() < cfg.accel_min {
        return false;
    }
    let earliest = frame.saturating_sub(cfg.no_hold_frames);
    if (earliest..=frame).any(|f| holds(table, f, player)) {
        return false;
    }
    within_deg(angle_between(s.vel, s.acc), cfg.init_angle_max)
}

/// All initiation onsets; runs of qualifying frames collapse to their first frame.
pub fn detect_initiations(table: &FrameTable, cfg: &DetectionConfig) -> Vec<Initiation> {
    let mut out = Vec::new();
    for p in table.possessions() {
        let frames = table.possession_frames(p.id);
        let offense: Vec<u8> = frames[0]
            .players(ObjectClass::Offense)
            .map(|o| o.id)
            .collect();
        for &player in &offense {
            let mut previous = false;
            for f in frames {
                let hit = is_initiation(table, f.index, player, cfg);
                if hit && !previous {
                    out.push(Initiation {
                        possession_id: p.id,
                        player_id: player,
                        t0: f.index,
                    });
                }
                previous = hit;
            }
        }
    }
    out.sort_by_key(|i| (i.possession_id, i.t0, i.player_id));
    out
}

/// Grows `seq.end` while the run stays fast, straight and disc-free.
pub fn extend_forward(
    table: &FrameTable,
    seq: MovementSequence,
    cfg: &DetectionConfig,
) -> MovementSequence {
    let Some(poss) = table.possession(seq.possession_id) else {
        return seq;
    };
    let id = seq.player_id;
    let Some(first) = state(table, seq.t0, id) else {
        return seq;
    };
    let mut end = seq.t0;
    let mut velocity_sum = first.vel;
    let mut previous = first.vel;
    for t in seq.t0 + 1..=poss.last_frame {
        let s = state(table, t, id).expect("frame inside possession");
        if s.holder
            || s.vel.norm() < cfg.fwd_speed_min
            || !within_deg(angle_between(previous, s.vel), cfg.fwd_turn_max)
            || !within_deg(angle_between(velocity_sum, s.vel), cfg.fwd_mean_dev_max)
        {
            break;
        }
        end = t;
        velocity_sum += s.vel;
        previous = s.vel;
    }
    MovementSequence { end, ..seq }
}

/// Grows `seq.start` back over frames where the player was already moving
/// and not slowing into the next frame.
pub fn extend_backward(
    table: &FrameTable,
    seq: MovementSequence,
    cfg: &DetectionConfig,
) -> MovementSequence {
    extend_backward_until(table, seq, cfg, None)
}

fn extend_backward_until(
    table: &FrameTable,
    seq: MovementSequence,
    cfg: &DetectionConfig,
    floor: Option<u32>,
) -> MovementSequence {
    let Some(poss) = table.possession(seq.possession_id) else {
        return seq;
    };
    let lowest = floor.map_or(poss.first_frame, |f| f.max(poss.first_frame));
    let id = seq.player_id;
    let mut start = seq.t0;
    while start > lowest {
        let t = start - 1;
        let speed = state(table, t, id).expect("frame inside possession").vel.norm();
        let next = state(table, start, id).expect("frame inside possession").vel.norm();
        if speed < cfg.bwd_speed_min || speed - next > cfg.bwd_decel_max {
            break;
        }
        start = t;
    }
    MovementSequence { start, ..seq }
}

/// Crowding checks at `seq.end`.
pub fn evaluate_exclusions(
    table: &FrameTable,
    seq: &MovementSequence,
    cfg: &DetectionConfig,
) -> ExclusionOutcome {
    let frame = table.frame(seq.end).expect("sequence end inside table");
    let me = frame.object(seq.player_id);
    let others: Vec<Vec2> = frame
        .players(ObjectClass::Offense)
        .filter(|o| o.id != seq.player_id)
        .map(|o| o.pos - me.pos)
        .collect();
    let nearby = others.iter().filter(|d| d.norm() <= cfg.excl_radius).count();
    let half = cfg.excl_cone / 2.0;
    let in_cone = me.vel.normalized().map(|_| {
        others
            .iter()
            .filter(|&&d| angle_between(me.vel, d).is_some_and(|a| a.to_degrees() <= half))
            .count()
    });
    let crowded = nearby >= 2 || in_cone.is_some_and(|c| c >= 2);
    ExclusionOutcome {
        retained: !crowded,
        nearby,
        in_cone,
    }
}

/// `true` when the sequence survives the crowding checks.
pub fn apply_exclusions(table: &FrameTable, seq: &MovementSequence, cfg: &DetectionConfig) -> bool {
    evaluate_exclusions(table, seq, cfg).retained
}

/// Full pipeline: initiations, extension, de-overlap and exclusion flags.
///
/// An initiation that falls inside an earlier sequence of the same player is
/// absorbed by it; backward extension never reaches into the previous one.
pub fn detect_sequences(table: &FrameTable, cfg: &DetectionConfig) -> Vec<DetectedSequence> {
    let mut last_end: std::collections::HashMap<(u32, u8), u32> = Default::default();
    let mut out = Vec::new();
    for init in detect_initiations(table, cfg) {
        let key = (init.possession_id, init.player_id);
        let floor = last_end.get(&key).copied();
        if floor.is_some_and(|end| init.t0 <= end) {
            continue;
        }
        let seq = MovementSequence::at(init.possession_id, init.player_id, init.t0);
        let seq = extend_backward_until(table, seq, cfg, floor.map(|e| e + 1));
        let seq = extend_forward(table, seq, cfg);
        last_end.insert(key, seq.end);
        out.push(DetectedSequence {
            sequence: seq,
            exclusion: evaluate_exclusions(table, &seq, cfg),
        });
    }
    out
}

/// Row layout shared by [`write_sequences_csv`] and [`read_sequences_csv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub possession_id: u32,
    pub player_id: u8,
    pub start: u32,
    pub t0: u32,
    pub end: u32,
    pub retained: bool,
}

impl From<&DetectedSequence> for SequenceRow {
    fn from(d: &DetectedSequence) -> Self {
        let s = d.sequence;
        Self {
            possession_id: s.possession_id,
            player_id: s.player_id,
            start: s.start,
            t0: s.t0,
            end: s.end,
            retained: d.retained(),
        }
    }
}

impl SequenceRow {
    pub fn sequence(&self) -> MovementSequence {
        MovementSequence {
            possession_id: self.possession_id,
            player_id: self.player_id,
            start: self.start,
            t0: self.t0,
            end: self.end,
        }
    }
}

pub fn write_sequences_csv<W: Write>(detected: &[DetectedSequence], writer: W) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(writer);
    wtr.write_record(["possession_id", "player_id", "start", "t0", "end", "retained"])?;
    for d in detected {
        wtr.serialize(SequenceRow::from(d))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_sequences_csv<R: Read>(reader: R) -> Result<Vec<SequenceRow>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
