//! Tracking data in CSV form.
//!
//! Each row is one object (player or disc) at one frame. A [`FrameTable`]
//! groups rows by frame, checks the per-frame invariants (7 offense,
//! 7 defense, 1 disc, at most one holder) and splits the frames into
//! possessions at every gap in the frame numbering.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Vec2, FIELD_LENGTH, FIELD_WIDTH};

pub const DEFAULT_FPS: f64 = 15.0;
pub const OBJECTS_PER_FRAME: usize = 15;
pub const PLAYERS_PER_TEAM: usize = 7;
/// Positions may leave the field by this much before a row is rejected.
pub const BOUNDS_TOLERANCE: f64 = 2.0;

pub const CSV_HEADER: [&str; 11] = [
    "frame", "id", "class", "x", "y", "vx", "vy", "ax", "ay", "closest", "holder",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(&'static str),
    #[error("line {line}: bad value `{value}` for column `{column}`")]
    BadValue {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("frame {frame}: expected 15 objects with ids 1-15, found {count} ({detail})")]
    BadObjectCount {
        frame: u32,
        count: usize,
        detail: String,
    },
    #[error("frame {frame}: expected 7 offense, 7 defense, 1 disc; found {offense}/{defense}/{disc}")]
    BadClassCount {
        frame: u32,
        offense: usize,
        defense: usize,
        disc: usize,
    },
    #[error("frame {frame}, id {id}: position ({x:.3}, {y:.3}) outside the field tolerance band")]
    OutOfBounds { frame: u32, id: u8, x: f64, y: f64 },
    #[error("frame {frame}: more than one object flagged as disc holder (ids {ids:?})")]
    DuplicateHolder { frame: u32, ids: Vec<u8> },
    #[error("frame {frame}, id {id}: `closest` = {closest} is not an opposing player")]
    BadPairing { frame: u32, id: u8, closest: u8 },
    #[error("possession {possession}: no frame has a disc holder to anchor the disc")]
    NoHolderAnchor { possession: u32 },
    #[error("possession {possession}: {len} frames is shorter than the smoothing window {window}")]
    TooShort {
        possession: u32,
        len: usize,
        window: usize,
    },
    #[error("invalid smoothing window {0}: must be odd and at least 3")]
    BadWindow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Offense,
    Defense,
    Disc,
}

impl ObjectClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Offense => "offense",
            ObjectClass::Defense => "defense",
            ObjectClass::Disc => "disc",
        }
    }

    pub fn is_player(self) -> bool {
        self != ObjectClass::Disc
    }

    /// The team a `closest` pairing must point at.
    pub fn opponent(self) -> Option<ObjectClass> {
        match self {
            ObjectClass::Offense => Some(ObjectClass::Defense),
            ObjectClass::Defense => Some(ObjectClass::Offense),
            ObjectClass::Disc => None,
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "offense" => Ok(ObjectClass::Offense),
            "defense" => Ok(ObjectClass::Defense),
            "disc" => Ok(ObjectClass::Disc),
            _ => Err(()),
        }
    }
}

/// One object at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub frame: u32,
    pub id: u8,
    pub class: ObjectClass,
    pub pos: Vec2,
    pub vel: Vec2,
    pub acc: Vec2,
    /// Paired opposing player; always `None` for the disc.
    pub closest: Option<u8>,
    pub holder: bool,
}

impl ObjectState {
    pub fn new(frame: u32, id: u8, class: ObjectClass, pos: Vec2) -> Self {
        Self {
            frame,
            id,
            class,
            pos,
            vel: Vec2::ZERO,
            acc: Vec2::ZERO,
            closest: None,
            holder: false,
        }
    }
}

/// All 15 objects at one frame, stored by id (slot `id - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub possession: u32,
    objects: Vec<ObjectState>,
}

impl Frame {
    pub fn objects(&self) -> &[ObjectState] {
        &self.objects
    }

    pub fn object(&self, id: u8) -> &ObjectState {
        &self.objects[usize::from(id) - 1]
    }

    pub fn object_mut(&mut self, id: u8) -> &mut ObjectState {
        &mut self.objects[usize::from(id) - 1]
    }

    pub fn disc(&self) -> &ObjectState {
        self.objects
            .iter()
            .find(|o| o.class == ObjectClass::Disc)
            .expect("validated frame has a disc")
    }

    /// The player holding the disc, if any.
    pub fn holder(&self) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.holder && o.class.is_player())
    }

    pub fn players(&self, class: ObjectClass) -> impl Iterator<Item = &ObjectState> {
        self.objects.iter().filter(move |o| o.class == class)
    }
}

/// A maximal run of contiguous frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Possession {
    pub id: u32,
    pub first_frame: u32,
    pub last_frame: u32,
}

impl Possession {
    pub fn len(&self) -> usize {
        (self.last_frame - self.first_frame + 1) as usize
    }

    /// Always false: a possession holds at least one frame.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: u32) -> bool {
        (self.first_frame..=self.last_frame).contains(&frame)
    }
}

/// Validated tracking data, ordered by frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTable {
    fps: f64,
    frames: Vec<Frame>,
    possessions: Vec<Possession>,
    /// Offset of each possession's first frame in `frames`.
    offsets: Vec<usize>,
}

impl FrameTable {
    /// Groups rows by frame and checks every invariant.
    pub fn from_states(fps: f64, mut states: Vec<ObjectState>) -> Result<Self, DataError> {
        states.sort_by_key(|s| (s.frame, s.id));
        let mut frames: Vec<Frame> = Vec::new();
        for chunk in states.chunk_by(|a, b| a.frame == b.frame) {
            frames.push(build_frame(chunk)?);
        }
        Ok(Self::from_frames(fps, frames))
    }

    fn from_frames(fps: f64, mut frames: Vec<Frame>) -> Self {
        let mut possessions = Vec::new();
        let mut offsets = Vec::new();
        for (i, frame) in frames.iter_mut().enumerate() {
            let starts_new = i == 0 || frame.index != possessions_last(&possessions) + 1;
            if starts_new {
                possessions.push(Possession {
                    id: possessions.len() as u32,
                    first_frame: frame.index,
                    last_frame: frame.index,
                });
                offsets.push(i);
            } else {
                possessions.last_mut().expect("pushed above").last_frame = frame.index;
            }
            frame.possession = possessions.len() as u32 - 1;
        }
        Self {
            fps,
            frames,
            possessions,
            offsets,
        }
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn possessions(&self) -> &[Possession] {
        &self.possessions
    }

    pub fn possession(&self, id: u32) -> Option<&Possession> {
        self.possessions.get(id as usize)
    }

    /// The possession containing `frame`.
    pub fn possession_of(&self, frame: u32) -> Option<&Possession> {
        self.frame(frame)
            .map(|f| &self.possessions[f.possession as usize])
    }

    /// Frames of one possession in order.
    pub fn possession_frames(&self, id: u32) -> &[Frame] {
        let p = &self.possessions[id as usize];
        let start = self.offsets[id as usize];
        &self.frames[start..start + p.len()]
    }

    pub fn frame(&self, index: u32) -> Option<&Frame> {
        self.frames
            .binary_search_by_key(&index, |f| f.index)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn states(&self) -> impl Iterator<Item = &ObjectState> {
        self.frames.iter().flat_map(|f| f.objects.iter())
    }

    /// Applies `f` to every object state, keeping frame structure.
    pub(crate) fn map_states(&self, mut f: impl FnMut(&Frame, &ObjectState) -> ObjectState) -> Self {
        let frames = self
            .frames
            .iter()
            .map(|frame| Frame {
                index: frame.index,
                possession: frame.possession,
                objects: frame.objects.iter().map(|o| f(frame, o)).collect(),
            })
            .collect();
        Self {
            fps: self.fps,
            frames,
            possessions: self.possessions.clone(),
            offsets: self.offsets.clone(),
        }
    }

    /// Replaces frames with modified copies; the index set must be unchanged.
    pub(crate) fn with_frames(&self, frames: Vec<Frame>) -> Self {
        debug_assert_eq!(frames.len(), self.frames.len());
        Self {
            fps: self.fps,
            frames,
            possessions: self.possessions.clone(),
            offsets: self.offsets.clone(),
        }
    }

    /// Position series of one object over one possession.
    pub fn positions(&self, possession: u32, id: u8) -> Vec<Vec2> {
        self.possession_frames(possession)
            .iter()
            .map(|f| f.object(id).pos)
            .collect()
    }
}

fn possessions_last(possessions: &[Possession]) -> u32 {
    possessions.last().map_or(0, |p| p.last_frame)
}

fn build_frame(rows: &[ObjectState]) -> Result<Frame, DataError> {
    let index = rows[0].frame;
    let ids: Vec<u8> = rows.iter().map(|r| r.id).collect();
    let expected: Vec<u8> = (1..=OBJECTS_PER_FRAME as u8).collect();
    if ids != expected {
        let detail = if rows.len() != OBJECTS_PER_FRAME {
            format!("{} rows", rows.len())
        } else {
            format!("ids {ids:?}")
        };
        return Err(DataError::BadObjectCount {
            frame: index,
            count: rows.len(),
            detail,
        });
    }
    let count = |c| rows.iter().filter(|r| r.class == c).count();
    let (offense, defense, disc) = (
        count(ObjectClass::Offense),
        count(ObjectClass::Defense),
        count(ObjectClass::Disc),
    );
    if offense != PLAYERS_PER_TEAM || defense != PLAYERS_PER_TEAM || disc != 1 {
        return Err(DataError::BadClassCount {
            frame: index,
            offense,
            defense,
            disc,
        });
    }
    let holders: Vec<u8> = rows.iter().filter(|r| r.holder).map(|r| r.id).collect();
    if holders.len() > 1 {
        return Err(DataError::DuplicateHolder {
            frame: index,
            ids: holders,
        });
    }
    for r in rows {
        let p = r.pos;
        let inside = (-BOUNDS_TOLERANCE..=FIELD_LENGTH + BOUNDS_TOLERANCE).contains(&p.x)
            && (-BOUNDS_TOLERANCE..=FIELD_WIDTH + BOUNDS_TOLERANCE).contains(&p.y);
        if !inside {
            return Err(DataError::OutOfBounds {
                frame: index,
                id: r.id,
                x: p.x,
                y: p.y,
            });
        }
        if let Some(c) = r.closest {
            let ok = (1..=OBJECTS_PER_FRAME as u8).contains(&c)
                && Some(rows[usize::from(c) - 1].class) == r.class.opponent();
            if !ok {
                return Err(DataError::BadPairing {
                    frame: index,
                    id: r.id,
                    closest: c,
                });
            }
        }
    }
    Ok(Frame {
        index,
        possession: 0,
        objects: rows.to_vec(),
    })
}

/// Reads and validates a tracking CSV file.
pub fn parse_csv(path: impl AsRef<Path>) -> Result<FrameTable, DataError> {
    read_csv(File::open(path)?)
}

pub fn read_csv<R: Read>(reader: R) -> Result<FrameTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 11];
    for (slot, name) in cols.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or(DataError::MissingColumn(name))?;
    }

    let mut states = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(cols[i]).unwrap_or("");
        let bad = |i: usize| DataError::BadValue {
            line,
            column: CSV_HEADER[i],
            value: field(i).to_string(),
        };
        let num = |i: usize| -> Result<f64, DataError> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(i))
        };
        let frame: u32 = field(0).parse().map_err(|_| bad(0))?;
        let id: u8 = field(1)
            .parse()
            .ok()
            .filter(|id| (1..=OBJECTS_PER_FRAME as u8).contains(id))
            .ok_or_else(|| bad(1))?;
        let class: ObjectClass = field(2).parse().map_err(|_| bad(2))?;
        let closest = match field(9).to_ascii_lowercase().as_str() {
            "" | "nan" | "-1" | "0" => None,
            s => Some(s.parse::<u8>().map_err(|_| bad(9))?),
        };
        let holder = match field(10).to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" | "" => false,
            _ => return Err(bad(10)),
        };
        states.push(ObjectState {
            frame,
            id,
            class,
            pos: Vec2::new(num(3)?, num(4)?),
            vel: Vec2::new(num(5)?, num(6)?),
            acc: Vec2::new(num(7)?, num(8)?),
            closest,
            holder,
        });
    }
    FrameTable::from_states(DEFAULT_FPS, states)
}

/// Writes the table in the canonical column order with 3-decimal floats.
pub fn write_csv<W: Write>(table: &FrameTable, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for s in table.states() {
        wtr.write_record([
            s.frame.to_string(),
            s.id.to_string(),
            s.class.to_string(),
            fmt3(s.pos.x),
            fmt3(s.pos.y),
            fmt3(s.vel.x),
            fmt3(s.vel.y),
            fmt3(s.acc.x),
            fmt3(s.acc.y),
            s.closest.map(|c| c.to_string()).unwrap_or_default(),
            s.holder.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(table: &FrameTable, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::io::BufWriter::new(File::create(path)?);
    write_csv(table, file)
}

fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    // "-0.000" would not survive a parse/format cycle as the same text.
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// Places the disc on its holder and interpolates it linearly across passes.
///
/// Frames before the first (after the last) held frame of a possession keep
/// the disc at that first (last) anchor.
pub fn interpolate_disc(table: &FrameTable) -> Result<FrameTable, DataError> {
    let mut frames = table.frames().to_vec();
    for p in table.possessions() {
        let start = table.offsets[p.id as usize];
        let span = &mut frames[start..start + p.len()];
        let anchors: Vec<(usize, Vec2)> = span
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.holder().map(|h| (i, h.pos)))
            .collect();
        if anchors.is_empty() {
            return Err(DataError::NoHolderAnchor { possession: p.id });
        }
        let disc_id = span[0].disc().id;
        let mut next = 0usize;
        for (i, frame) in span.iter_mut().enumerate() {
            while next < anchors.len() && anchors[next].0 < i {
                next += 1;
            }
            let pos = if next < anchors.len() && anchors[next].0 == i {
                anchors[next].1
            } else if next == 0 {
                anchors[0].1
            } else if next == anchors.len() {
                anchors[next - 1].1
            } else {
                let (i0, p0) = anchors[next - 1];
                let (i1, p1) = anchors[next];
                let s = (i - i0) as f64 / (i1 - i0) as f64;
                p0 + (p1 - p0) * s
            };
            frame.object_mut(disc_id).pos = pos;
        }
    }
    Ok(table.with_frames(frames))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeScheme {
    /// Central differences on smoothed positions, then on the velocities.
    CentralDifference,
    /// As above, but velocities are smoothed again before differencing.
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub window: usize,
    pub scheme: DerivativeScheme,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            window: 5,
            scheme: DerivativeScheme::CentralDifference,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(DataError::BadWindow(self.window));
        }
        Ok(())
    }
}

/// Centered moving average; the window shrinks symmetrically near the ends.
pub(crate) fn moving_average(xs: &[Vec2], window: usize) -> Vec<Vec2> {
    let half = window / 2;
    let n = xs.len();
    (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            let sum = xs[i - k..=i + k].iter().fold(Vec2::ZERO, |acc, &p| acc + p);
            sum / (2 * k + 1) as f64
        })
        .collect()
}

/// Central differences, one-sided at the ends.
pub(crate) fn differentiate(xs: &[Vec2], dt: f64) -> Vec<Vec2> {
    let n = xs.len();
    if n < 2 {
        return vec![Vec2::ZERO; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (xs[1] - xs[0]) / dt
            } else if i == n - 1 {
                (xs[n - 1] - xs[n - 2]) / dt
            } else {
                (xs[i + 1] - xs[i - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

/// Recomputes velocity and acceleration for every object from positions.
pub fn estimate_derivatives(
    table: &FrameTable,
    cfg: &SmoothingConfig,
) -> Result<FrameTable, DataError> {
    cfg.validate()?;
    let dt = 1.0 / table.fps();
    let mut frames = table.frames().to_vec();
    for p in table.possessions() {
        if p.len() < cfg.window {
            return Err(DataError::TooShort {
                possession: p.id,
                len: p.len(),
                window: cfg.window,
            });
        }
        let start = table.offsets[p.id as usize];
        for id in 1..=OBJECTS_PER_FRAME as u8 {
            let raw = table.positions(p.id, id);
            let smooth = moving_average(&raw, cfg.window);
            let vel = differentiate(&smooth, dt);
            let acc = match cfg.scheme {
                DerivativeScheme::CentralDifference => differentiate(&vel, dt),
                DerivativeScheme::Filtered => {
                    differentiate(&moving_average(&vel, cfg.window), dt)
                }
            };
            for (k, frame) in frames[start..start + p.len()].iter_mut().enumerate() {
                let o = frame.object_mut(id);
                o.vel = vel[k];
                o.acc = acc[k];
            }
        }
    }
    Ok(table.with_frames(frames))
}

/// Greedy one-to-one offense/defense pairing by ascending distance.
///
/// Ties are broken by (offense id, defense id).
pub fn pair_frame(frame: &Frame) -> Vec<(u8, u8)> {
    let offense: Vec<&ObjectState> = frame.players(ObjectClass::Offense).collect();
    let defense: Vec<&ObjectState> = frame.players(ObjectClass::Defense).collect();
    let mut candidates: Vec<(f64, u8, u8)> = offense
        .iter()
        .flat_map(|o| defense.iter().map(move |d| (o.pos.distance(d.pos), o.id, d.id)))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_o = [false; OBJECTS_PER_FRAME + 1];
    let mut used_d = [false; OBJECTS_PER_FRAME + 1];
    let mut pairs = Vec::with_capacity(offense.len());
    for (_, o, d) in candidates {
        if !used_o[usize::from(o)] && !used_d[usize::from(d)] {
            used_o[usize::from(o)] = true;
            used_d[usize::from(d)] = true;
            pairs.push((o, d));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Fills `closest` symmetrically on every frame using [`pair_frame`].
pub fn pair_closest(table: &FrameTable) -> FrameTable {
    let frames = table
        .frames()
        .iter()
        .map(|frame| {
            let mut out = frame.clone();
            for o in out.objects.iter_mut() {
                o.closest = None;
            }
            for (o, d) in pair_frame(frame) {
                out.object_mut(o).closest = Some(d);
                out.object_mut(d).closest = Some(o);
            }
            out
        })
        .collect();
    table.with_frames(frames)
}

/// Disc interpolation, smoothed derivatives, then marking pairs.
pub fn preprocess(table: &FrameTable, cfg: &SmoothingConfig) -> Result<FrameTable, DataError> {
    let table = interpolate_disc(table)?;
    let table = estimate_derivatives(&table, cfg)?;
    Ok(pair_closest(&table))
}
