//! Deterministic synthetic plays with closed-form kinematics.
//!
//! Every player follows a chain of constant-acceleration segments, so the
//! generated velocities and accelerations are exact rather than estimated.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataio::{
    differentiate, interpolate_disc, pair_closest, DataError, FrameTable, ObjectClass, ObjectState,
    DEFAULT_FPS, OBJECTS_PER_FRAME,
};
use crate::geom::{Vec2, FIELD_WIDTH};

pub const MAX_SPEED: f64 = 12.0;
pub const DISC_ID: u8 = 15;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible script: {0}")]
    Infeasible(String),
    #[error("script line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn class_of(id: u8) -> ObjectClass {
    match id {
        1..=7 => ObjectClass::Offense,
        8..=14 => ObjectClass::Defense,
        _ => ObjectClass::Disc,
    }
}

/// Default positions: offense 1-7 (1 holds the disc), defender `id + 7`
/// 1.5 m downfield of its attacker. Symmetric about the long axis.
pub fn formation() -> [Vec2; OBJECTS_PER_FRAME] {
    let offense = [
        Vec2::new(20.0, 18.5),
        Vec2::new(28.0, 5.0),
        Vec2::new(28.0, 32.0),
        Vec2::new(34.0, 10.0),
        Vec2::new(34.0, 27.0),
        Vec2::new(12.0, 8.0),
        Vec2::new(12.0, 29.0),
    ];
    let mut out = [Vec2::ZERO; OBJECTS_PER_FRAME];
    for (i, &o) in offense.iter().enumerate() {
        out[i] = o;
        out[i + 7] = o + Vec2::new(1.5, 0.0);
    }
    out[14] = offense[0];
    out
}

/// Static formation table for `frames` frames; `edit` may adjust any state.
///
/// Pairing is fixed (`id` with `id + 7`) and id 1 holds the disc throughout,
/// unless `edit` changes it.
pub fn formation_table(frames: u32, edit: impl Fn(&mut ObjectState)) -> FrameTable {
    let base = formation();
    let mut states = Vec::with_capacity(frames as usize * OBJECTS_PER_FRAME);
    for frame in 0..frames {
        for id in 1..=OBJECTS_PER_FRAME as u8 {
            let mut s = ObjectState::new(frame, id, class_of(id), base[usize::from(id) - 1]);
            s.closest = match id {
                1..=7 => Some(id + 7),
                8..=14 => Some(id - 7),
                _ => None,
            };
            s.holder = id == 1;
            edit(&mut s);
            states.push(s);
        }
    }
    FrameTable::from_states(DEFAULT_FPS, states).expect("formation fixture is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    /// Stand still.
    Hold { frames: u32 },
    /// Constant acceleration starting from the current velocity.
    Accelerate { accel: Vec2, frames: u32 },
    /// Keep the current velocity.
    Cruise { frames: u32 },
    /// Straight line to a waypoint at constant speed.
    MoveTo { target: Vec2, speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerScript {
    pub id: u8,
    /// Overrides the formation position.
    pub start: Option<Vec2>,
    pub motions: Vec<Motion>,
}

impl PlayerScript {
    pub fn new(id: u8) -> Self {
        Self {
            id,
            start: None,
            motions: Vec::new(),
        }
    }

    pub fn start(mut self, p: Vec2) -> Self {
        self.start = Some(p);
        self
    }

    pub fn then(mut self, m: Motion) -> Self {
        self.motions.push(m);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    /// Last frame the thrower holds the disc.
    pub release: u32,
    pub receiver: u8,
    /// First frame the receiver holds the disc.
    pub catch: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPlay {
    pub duration: u32,
    pub seed: u64,
    /// Standard deviation of Gaussian position noise, meters (0 = none).
    pub jitter: f64,
    pub initial_holder: u8,
    pub passes: Vec<Pass>,
    pub players: Vec<PlayerScript>,
}

impl Default for ScriptedPlay {
    fn default() -> Self {
        Self {
            duration: 90,
            seed: 0,
            jitter: 0.0,
            initial_holder: 1,
            passes: Vec::new(),
            players: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t_start: f64,
    t_end: f64,
    p0: Vec2,
    v0: Vec2,
    acc: Vec2,
}

impl Segment {
    fn eval(&self, t: f64) -> (Vec2, Vec2, Vec2) {
        let dt = t - self.t_start;
        (
            self.p0 + self.v0 * dt + self.acc * (0.5 * dt * dt),
            self.v0 + self.acc * dt,
            self.acc,
        )
    }
}

fn build_segments(start: Vec2, motions: &[Motion], fps: f64, id: u8) -> Result<Vec<Segment>, SynthError> {
    let mut segs = Vec::new();
    let mut t = 0.0;
    let mut p = start;
    let mut v = Vec2::ZERO;
    for m in motions {
        let (v0, acc, duration) = match *m {
            Motion::Hold { frames } => (Vec2::ZERO, Vec2::ZERO, f64::from(frames) / fps),
            Motion::Accelerate { accel, frames } => (v, accel, f64::from(frames) / fps),
            Motion::Cruise { frames } => (v, Vec2::ZERO, f64::from(frames) / fps),
            Motion::MoveTo { target, speed } => {
                if speed.is_nan() || speed <= 0.0 {
                    return Err(SynthError::Infeasible(format!("player {id}: waypoint speed {speed}")));
                }
                let d = target - p;
                let dir = d.normalized().unwrap_or(Vec2::ZERO);
                (dir * speed, Vec2::ZERO, d.norm() / speed)
            }
        };
        let seg = Segment {
            t_start: t,
            t_end: t + duration,
            p0: p,
            v0,
            acc,
        };
        let (p1, v1, _) = seg.eval(seg.t_end);
        for speed in [v0.norm(), v1.norm()] {
            if speed > MAX_SPEED + 1e-9 {
                return Err(SynthError::Infeasible(format!(
                    "player {id}: speed {speed:.2} m/s exceeds {MAX_SPEED}"
                )));
            }
        }
        segs.push(seg);
        t = seg.t_end;
        p = p1;
        v = v1;
    }
    // Trailing rest.
    segs.push(Segment {
        t_start: t,
        t_end: f64::INFINITY,
        p0: p,
        v0: Vec2::ZERO,
        acc: Vec2::ZERO,
    });
    Ok(segs)
}

fn sample(segs: &[Segment], t: f64) -> (Vec2, Vec2, Vec2) {
    // Boundary instants belong to the later segment.
    let seg = segs
        .iter()
        .find(|s| t < s.t_end && t >= s.t_start)
        .unwrap_or_else(|| segs.last().expect("at least the rest segment"));
    seg.eval(t)
}

impl ScriptedPlay {
    fn holder_at(&self, frame: u32) -> Option<u8> {
        let mut holder = Some(self.initial_holder);
        for pass in &self.passes {
            if frame > pass.release && frame < pass.catch {
                return None;
            }
            if frame >= pass.catch {
                holder = Some(pass.receiver);
            }
        }
        holder
    }

    fn check_passes(&self) -> Result<(), SynthError> {
        let mut holder = self.initial_holder;
        let mut last_catch = 0;
        if class_of(holder) != ObjectClass::Offense {
            return Err(SynthError::Infeasible(format!("holder {holder} is not offense")));
        }
        for p in &self.passes {
            if p.release < last_catch || p.catch <= p.release || p.catch >= self.duration {
                return Err(SynthError::Infeasible(format!("pass {p:?} out of order")));
            }
            if class_of(p.receiver) != ObjectClass::Offense || p.receiver == holder {
                return Err(SynthError::Infeasible(format!("pass {p:?} to invalid receiver")));
            }
            holder = p.receiver;
            last_catch = p.catch;
        }
        Ok(())
    }

    /// The same play reflected across the field's long axis.
    ///
    /// Every player gets an explicit mirrored start so the result does not
    /// depend on the formation being symmetric.
    pub fn mirrored(&self) -> Self {
        let base = formation();
        let flip = |p: Vec2| Vec2::new(p.x, FIELD_WIDTH - p.y);
        let flip_v = |v: Vec2| Vec2::new(v.x, -v.y);
        let players = (1..=14u8)
            .map(|id| {
                let script = self.players.iter().find(|s| s.id == id);
                let start = script
                    .and_then(|s| s.start)
                    .unwrap_or(base[usize::from(id) - 1]);
                let motions = script
                    .map(|s| {
                        s.motions
                            .iter()
                            .map(|m| match *m {
                                Motion::Accelerate { accel, frames } => Motion::Accelerate {
                                    accel: flip_v(accel),
                                    frames,
                                },
                                Motion::MoveTo { target, speed } => Motion::MoveTo {
                                    target: flip(target),
                                    speed,
                                },
                                ref other => other.clone(),
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                PlayerScript {
                    id,
                    start: Some(flip(start)),
                    motions,
                }
            })
            .collect();
        Self {
            players,
            ..self.clone()
        }
    }

    /// Object states of the play with frames numbered from `first_frame`.
    fn states(&self, first_frame: u32) -> Result<Vec<ObjectState>, SynthError> {
        if self.duration == 0 {
            return Err(SynthError::Infeasible("empty duration".into()));
        }
        self.check_passes()?;
        let fps = DEFAULT_FPS;
        let base = formation();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = if self.jitter > 0.0 {
            Some(Normal::new(0.0, self.jitter).map_err(|e| SynthError::Infeasible(e.to_string()))?)
        } else {
            None
        };

        let mut tracks = Vec::with_capacity(14);
        for id in 1..=14u8 {
            let script = self.players.iter().find(|s| s.id == id);
            let start = script
                .and_then(|s| s.start)
                .unwrap_or(base[usize::from(id) - 1]);
            let motions = script.map(|s| s.motions.as_slice()).unwrap_or(&[]);
            tracks.push(build_segments(start, motions, fps, id)?);
        }
        if let Some(s) = self.players.iter().find(|s| !(1..=14).contains(&s.id)) {
            return Err(SynthError::Infeasible(format!("no player with id {}", s.id)));
        }

        let mut states = Vec::with_capacity(self.duration as usize * OBJECTS_PER_FRAME);
        for k in 0..self.duration {
            let t = f64::from(k) / fps;
            let holder = self.holder_at(k);
            for id in 1..=14u8 {
                let (mut p, v, a) = sample(&tracks[usize::from(id) - 1], t);
                if let Some(n) = &noise {
                    p += Vec2::new(n.sample(&mut rng), n.sample(&mut rng));
                }
                let mut s = ObjectState::new(first_frame + k, id, class_of(id), p);
                s.vel = v;
                s.acc = a;
                s.holder = holder == Some(id);
                states.push(s);
            }
            states.push(ObjectState::new(first_frame + k, DISC_ID, ObjectClass::Disc, Vec2::ZERO));
        }
        Ok(states)
    }
}

/// Builds the table for one play with exact player kinematics.
pub fn generate(play: &ScriptedPlay) -> Result<FrameTable, SynthError> {
    generate_session(std::slice::from_ref(play))
}

/// Concatenates plays into one table; each play becomes its own possession,
/// separated from the previous one by a one-frame gap in the numbering.
pub fn generate_session(plays: &[ScriptedPlay]) -> Result<FrameTable, SynthError> {
    let mut states = Vec::new();
    let mut next = 0u32;
    for play in plays {
        states.extend(play.states(next)?);
        next += play.duration + 1;
    }
    let table = FrameTable::from_states(DEFAULT_FPS, states).map_err(|e| match e {
        DataError::OutOfBounds { frame, id, x, y } => SynthError::Infeasible(format!(
            "frame {frame}: player {id} leaves the field at ({x:.2}, {y:.2})"
        )),
        other => SynthError::Data(other),
    })?;
    let table = interpolate_disc(&table)?;
    let dt = 1.0 / table.fps();
    let mut disc_kin = Vec::new();
    for p in table.possessions() {
        let pos = table.positions(p.id, DISC_ID);
        let vel = differentiate(&pos, dt);
        let acc = differentiate(&vel, dt);
        disc_kin.extend(vel.into_iter().zip(acc));
    }
    let mut kin = disc_kin.into_iter();
    let table = table.map_states(|_, s| {
        let mut s = *s;
        if s.id == DISC_ID {
            let (v, a) = kin.next().expect("one entry per frame");
            s.vel = v;
            s.acc = a;
        }
        s
    });
    Ok(pair_closest(&table))
}

/// A session of `count` plays, each with one scripted cut from a random
/// off-disc attacker at a random onset, plus some drift by the rest.
pub fn random_session(count: usize, seed: u64) -> Result<FrameTable, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plays: Vec<ScriptedPlay> = (0..count)
        .map(|i| random_play(&mut rng, seed.wrapping_add(i as u64)))
        .collect();
    generate_session(&plays)
}

/// One random single-cut play: a gentle jog-in, then a hard cut.
pub fn random_play(rng: &mut impl Rng, seed: u64) -> ScriptedPlay {
    let base = formation();
    let cutter: u8 = rng.random_range(2..=7);
    let jog_start: u32 = rng.random_range(8..=14);
    // The jog-in reaches 3.2-4.0 m/s at 2 m/s², below the onset threshold.
    let jog_speed: f64 = rng.random_range(3.2..4.0);
    let jog_frames = (jog_speed / 2.0 * DEFAULT_FPS).ceil() as u32;
    let onset = jog_start + jog_frames + rng.random_range(0..=4);
    let start = base[usize::from(cutter) - 1];
    // Cut toward the middle of the field and downfield.
    let toward_center = if start.y < FIELD_WIDTH / 2.0 { 1.0 } else { -1.0 };
    let angle: f64 = rng.random_range(0.0..0.6);
    let dir = Vec2::new(angle.cos(), toward_center * angle.sin());
    let accel_mag: f64 = rng.random_range(4.5..6.0);
    let accel_frames: u32 = rng.random_range(10..=14);
    let cruise: u32 = rng.random_range(10..=20);
    let defender = cutter + 7;
    let lag: u32 = rng.random_range(2..=6);
    let run = |hold: u32, scale: f64| {
        vec![
            Motion::Hold { frames: hold },
            Motion::Accelerate {
                accel: dir * 2.0,
                frames: jog_frames,
            },
            Motion::Cruise {
                frames: onset - jog_start - jog_frames,
            },
            Motion::Accelerate {
                accel: dir * (accel_mag * scale),
                frames: accel_frames,
            },
            Motion::Cruise { frames: cruise },
        ]
    };
    let mut players = vec![
        PlayerScript {
            id: cutter,
            start: None,
            motions: run(jog_start, 1.0),
        },
        PlayerScript {
            id: defender,
            start: None,
            motions: run(jog_start + lag, 0.9),
        },
    ];
    for id in (2..=7u8).filter(|&id| id != cutter) {
        let drift = Vec2::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
        players.push(PlayerScript::new(id).then(Motion::MoveTo {
            target: base[usize::from(id) - 1] + drift * 4.0,
            speed: rng.random_range(0.5..1.5),
        }));
    }
    let total = onset + accel_frames + cruise + 15;
    ScriptedPlay {
        duration: total.max(90),
        seed,
        jitter: 0.0,
        initial_holder: 1,
        passes: Vec::new(),
        players,
    }
}

/// A cut that comes too late: the receiver jogs toward the thrower and cuts
/// at frame 60 while the holder's marker steps back into the throwing lane.
/// The same cut made earlier would have met an open lane.
pub fn late_cut_play() -> ScriptedPlay {
    const CUT: u32 = 60;
    let run = |lag: u32, cut: f64| {
        vec![
            Motion::Hold { frames: CUT - 25 + lag },
            Motion::Accelerate {
                accel: Vec2::new(-2.0, 0.0),
                frames: 25,
            },
            Motion::Accelerate {
                accel: Vec2::new(-cut, 0.0),
                frames: 12,
            },
            Motion::Cruise { frames: 20 },
        ]
    };
    ScriptedPlay {
        duration: 130,
        players: vec![
            PlayerScript {
                id: 2,
                start: Some(Vec2::new(45.0, 18.5)),
                motions: run(0, 5.0),
            },
            PlayerScript {
                id: 9,
                start: Some(Vec2::new(46.5, 18.5)),
                motions: run(3, 4.5),
            },
            PlayerScript::new(8)
                .start(Vec2::new(20.0, 21.0))
                .then(Motion::Hold { frames: CUT })
                .then(Motion::MoveTo {
                    target: Vec2::new(21.5, 18.5),
                    speed: 3.0,
                }),
        ],
        ..Default::default()
    }
}

/// Parses the plain-text script format.
///
/// ```text
/// duration = 120
/// seed = 7
/// jitter = 0.02
/// holder = 1
/// pass = 60 4 75            # release receiver catch
/// player 4 start 34 10
/// player 4 hold 30
/// player 4 accel 5 0 12     # ax ay frames
/// player 4 cruise 10
/// player 4 moveto 60 12 6   # x y speed
/// ```
pub fn parse_script(text: &str) -> Result<ScriptedPlay, SynthError> {
    let mut play = ScriptedPlay::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| SynthError::Parse {
            line: line_no,
            msg: msg.to_string(),
        };
        if let Some((key, value)) = line.split_once('=') {
            let value = value.trim();
            let nums: Vec<&str> = value.split_whitespace().collect();
            match key.trim() {
                "duration" => play.duration = value.parse().map_err(|_| err("bad duration"))?,
                "seed" => play.seed = value.parse().map_err(|_| err("bad seed"))?,
                "jitter" => play.jitter = value.parse().map_err(|_| err("bad jitter"))?,
                "holder" => play.initial_holder = value.parse().map_err(|_| err("bad holder"))?,
                "pass" => {
                    let [r, to, c] = nums[..] else {
                        return Err(err("pass needs: release receiver catch"));
                    };
                    play.passes.push(Pass {
                        release: r.parse().map_err(|_| err("bad release frame"))?,
                        receiver: to.parse().map_err(|_| err("bad receiver"))?,
                        catch: c.parse().map_err(|_| err("bad catch frame"))?,
                    });
                }
                other => return Err(err(&format!("unknown key `{other}`"))),
            }
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let &["player", id, verb, ref args @ ..] = words.as_slice() else {
            return Err(err("expected `key = value` or `player <id> <motion> ...`"));
        };
        let id: u8 = id.parse().map_err(|_| err("bad player id"))?;
        let f = |k: usize| -> Result<f64, SynthError> {
            args.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(&format!("`{verb}` argument {} missing or invalid", k + 1)))
        };
        let n = |k: usize| -> Result<u32, SynthError> {
            args.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(&format!("`{verb}` frame count missing or invalid")))
        };
        let idx = match play.players.iter().position(|s| s.id == id) {
            Some(i) => i,
            None => {
                play.players.push(PlayerScript::new(id));
                play.players.len() - 1
            }
        };
        let script = &mut play.players[idx];
        match verb {
            "start" => script.start = Some(Vec2::new(f(0)?, f(1)?)),
            "hold" => script.motions.push(Motion::Hold { frames: n(0)? }),
            "cruise" => script.motions.push(Motion::Cruise { frames: n(0)? }),
            "accel" => script.motions.push(Motion::Accelerate {
                accel: Vec2::new(f(0)?, f(1)?),
                frames: n(2)?,
            }),
            "moveto" => script.motions.push(Motion::MoveTo {
                target: Vec2::new(f(0)?, f(1)?),
                speed: f(2)?,
            }),
            other => return Err(err(&format!("unknown motion `{other}`"))),
        }
    }
    Ok(play)
}

pub fn load_script(path: impl AsRef<Path>) -> Result<ScriptedPlay, SynthError> {
    parse_script(&std::fs::read_to_string(path)?)
}
