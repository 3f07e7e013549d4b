//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use ultitiming::control::{
    arm_length, layer_values, ppcf_field, reaction_time, reaction_time_from_angle,
    wuppcf, ControlParams, Grid, Layer,
};
use ultitiming::counterfactual::{build_sweep, DefenderRule};
use ultitiming::dataio::{Frame, FrameTable, ObjectState};
use ultitiming::detect::{
    detect_initiations, detect_sequences, evaluate_exclusions, extend_backward, extend_forward,
    DetectionConfig, MovementSequence,
};
use ultitiming::geom::{Vec2, FIELD_LENGTH, FIELD_WIDTH};
use ultitiming::render::heatmap;
use ultitiming::stats::{cliffs_delta, ks_two_sample, mann_whitney_u};
use ultitiming::synth::{
    formation_table, generate, late_cut_play, random_play, Motion, PlayerScript, ScriptedPlay,
};
use ultitiming::timing::{evaluate_actual, intercept, sweep, v_scenario, v_timing, SweepMode, TimingParams};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// A random single-cut play, its table and the cut as detected.
fn random_fixture(rng: &mut ChaCha8Rng, seed: u64) -> (FrameTable, MovementSequence) {
    let play = random_play(rng, seed);
    let table = generate(&play).expect("random play generates");
    let cutter = play.players[0].id;
    let seq = detect_sequences(&table, &DetectionConfig::default())
        .into_iter()
        .map(|d| d.sequence)
        .find(|s| s.player_id == cutter && s.t0 >= 15)
        .unwrap_or_else(|| panic!("no cut detected in play {seed}"));
    (table, seq)
}

fn same_bits(a: &ObjectState, b: &ObjectState) -> bool {
    let v = |s: &ObjectState| {
        [s.pos.x, s.pos.y, s.vel.x, s.vel.y, s.acc.x, s.acc.y].map(f64::to_bits)
    };
    v(a) == v(b) && a.holder == b.holder && a.closest == b.closest && a.class == b.class
}

fn continuity() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut scenarios = 0;
    for i in 0..200 {
        let (table, seq) = random_fixture(&mut rng, i);
        let sweep = build_sweep(&table, &seq, DefenderRule::ClosestAtOnset).map_err(|e| e.to_string())?;
        let original = table.possession_frames(seq.possession_id);
        for sc in &sweep {
            scenarios += 1;
            for gap in sc.boundary_gaps() {
                worst = worst.max(gap);
            }
            let moved = [Some(sc.target_id), sc.defender_id];
            for (f, g) in original.iter().zip(sc.frames()) {
                for (a, b) in f.objects().iter().zip(g.objects()) {
                    if !moved.contains(&Some(a.id)) && !same_bits(a, b) {
                        return Err(format!("play {i} xi {} moved object {} at frame {}", sc.xi.get(), a.id, f.index));
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(worst <= 1e-9, || format!("boundary gap {worst:e} m"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{scenarios} scenarios, max gap {worst:.1e} m, {:.2} s", elapsed.as_secs_f64()))
}

fn zero_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (timing, control, grid) = (TimingParams::default(), ControlParams::default(), Grid::default());
    for i in 0..50 {
        let (table, seq) = random_fixture(&mut rng, 1000 + i);
        let report = sweep(&table, &seq, DefenderRule::ClosestAtOnset, SweepMode::ZeroOnly, &timing, &control, &grid)
            .map_err(|e| e.to_string())?;
        let raw = evaluate_actual(&table, &seq, &timing, &control, &grid).map_err(|e| e.to_string())?;
        ensure(report.v_scenario.len() == 1, || "expected one scenario".into())?;
        ensure(report.v_scenario[0].to_bits() == raw.v_scenario.to_bits(), || {
            format!("fixture {i}: {} vs {}", report.v_scenario[0], raw.v_scenario)
        })?;
    }
    Ok("50 fixtures bit-identical".into())
}

/// A frame with every object placed at random; the disc is held by
/// attacker 1 in most frames and in flight otherwise.
fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    let mut kin = [(Vec2::ZERO, Vec2::ZERO); 15];
    for k in kin.iter_mut() {
        let p = Vec2::new(rng.random_range(0.0..FIELD_LENGTH), rng.random_range(0.0..FIELD_WIDTH));
        let heading: f64 = rng.random_range(-PI..PI);
        let speed: f64 = rng.random_range(0.0..7.0);
        *k = (p, Vec2::new(heading.cos(), heading.sin()) * speed);
    }
    let held = rng.random_bool(0.8);
    if held {
        kin[14] = (kin[0].0, Vec2::ZERO);
        kin[0].1 = Vec2::ZERO;
        // Put the marker within the stall radius in half the frames.
        if rng.random_bool(0.5) {
            kin[7].0 = kin[0].0 + Vec2::new(1.0, 0.5);
        }
    }
    let table = formation_table(1, |s| {
        let (p, v) = kin[usize::from(s.id) - 1];
        s.pos = p;
        s.vel = v;
        s.holder = held && s.id == 1;
    });
    table.frames()[0].clone()
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let grid = Grid::default();
    let cells = grid.all_cells();
    let coarse = ControlParams::default();
    let fine = ControlParams { dt: coarse.dt / 2.0, ..coarse };
    let (mut lo, mut hi, mut drift): (f64, f64, f64) = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..100 {
        let frame = random_frame(&mut rng);
        let a = wuppcf(&frame, &grid, &cells, &coarse);
        let b = wuppcf(&frame, &grid, &cells, &fine);
        let (ids, pa) = ppcf_field(&frame, &grid, &cells, &coarse);
        let (_, pb) = ppcf_field(&frame, &grid, &cells, &fine);
        let n = ids.len();
        for k in 0..cells.len() {
            for total in [a.total_at(k), pa[k * n..(k + 1) * n].iter().sum()] {
                lo = lo.min(total);
                hi = hi.max(total);
            }
            for i in 0..a.players.len() {
                drift = drift.max((a.uppcf[k * a.players.len() + i] - b.uppcf[k * b.players.len() + i]).abs());
            }
            for i in 0..n {
                drift = drift.max((pa[k * n + i] - pb[k * n + i]).abs());
            }
        }
    }
    ensure(lo >= 0.0 && hi <= 1.001, || format!("cell totals span [{lo}, {hi}]"))?;
    ensure(drift < 0.01, || format!("halving the step moved a value by {drift}"))?;
    Ok(format!("totals in [{lo:.4}, {hi:.4}], step-halving drift {drift:.2e}"))
}

fn reaction_bounds() -> Outcome {
    let mut k = 0u32;
    loop {
        let theta = f64::from(k) * 0.01;
        if theta > PI {
            break;
        }
        let rt = reaction_time_from_angle(theta);
        ensure((0.1..=1.1).contains(&rt), || format!("RT({theta}) = {rt}"))?;
        ensure(rt.to_bits() == (0.1 + theta / PI).to_bits(), || format!("RT({theta}) = {rt} off formula"))?;
        k += 1;
    }
    ensure(reaction_time_from_angle(0.0) == 0.1, || "RT(0) != 0.1".into())?;
    ensure(reaction_time_from_angle(PI) == 1.1, || "RT(pi) != 1.1".into())?;
    // The same endpoints through a player running toward and away from the disc.
    let params = ControlParams::default();
    let mut p = ObjectState::new(0, 4, ultitiming::dataio::ObjectClass::Offense, Vec2::new(30.0, 10.0));
    p.vel = Vec2::new(-4.0, 0.0);
    let toward = reaction_time(&p, Vec2::new(10.0, 10.0), None, &params);
    let away = reaction_time(&p, Vec2::new(50.0, 10.0), None, &params);
    ensure(toward == 0.1 && away == 1.1, || format!("player RT {toward} / {away}"))?;
    Ok(format!("{k} angles within [0.1, 1.1], endpoints exact"))
}

fn arm_anchor() -> Outcome {
    let values = [arm_length(0.0, 30.0), arm_length(30.0, 30.0), arm_length(15.0, 30.0)];
    ensure(values == [1.0, 0.0, 0.5], || format!("r(0), r(30), r(15) = {values:?}"))?;
    Ok("r(0) = 1, r(30) = 0, r(15) = 0.5".into())
}

fn intercept_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let v_disc = TimingParams::default().v_disc;
    let (mut worst_tau, mut worst_res): (f64, f64) = (0.0, 0.0);
    for i in 0..1000 {
        let pos = Vec2::new(rng.random_range(0.0..FIELD_LENGTH), rng.random_range(0.0..FIELD_WIDTH));
        let disc = Vec2::new(rng.random_range(0.0..FIELD_LENGTH), rng.random_range(0.0..FIELD_WIDTH));
        let heading: f64 = rng.random_range(-PI..PI);
        let vel = Vec2::new(heading.cos(), heading.sin()) * rng.random_range(0.0..9.0);
        let hit = intercept(pos, vel, disc, v_disc).ok_or_else(|| format!("case {i}: no intercept"))?;
        let d = pos - disc;
        let gap = |t: f64| (d + vel * t).norm() - t * v_disc;
        // First grid time at which the disc has caught up.
        let mut step = 0u64;
        while gap(step as f64 * 1e-4) > 0.0 {
            step += 1;
        }
        let scanned = step as f64 * 1e-4;
        worst_tau = worst_tau.max((scanned - hit.tau).abs());
        worst_res = worst_res.max(gap(hit.tau).abs());
    }
    ensure(worst_tau <= 2e-4, || format!("tau off the scan by {worst_tau:e} s"))?;
    ensure(worst_res < 1e-6, || format!("residual {worst_res:e} m"))?;
    Ok(format!("max |tau - scan| {worst_tau:.1e} s, max residual {worst_res:.1e} m"))
}

fn window_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for i in 0..1000 {
        let window = rng.random_range(1..=20usize);
        let len = rng.random_range(window + 1..=window + 100);
        let series: Vec<f64> = if i % 4 == 0 {
            // Coarse values produce tied windows.
            (0..len).map(|_| f64::from(rng.random_range(0..3u8)) / 4.0).collect()
        } else {
            (0..len).map(|_| rng.random::<f64>()).collect()
        };
        let mut best = (f64::NEG_INFINITY, 0);
        for t in 0..len - window {
            let mean = series[t + 1..=t + window].iter().sum::<f64>() / window as f64;
            if mean > best.0 {
                best = (mean, t + 1);
            }
        }
        let got = v_scenario(&series, window).map_err(|e| e.to_string())?;
        ensure(got.value.to_bits() == best.0.to_bits() && got.start == best.1, || {
            format!("series {i}: ({}, {}) vs oracle {best:?}", got.value, got.start)
        })?;
    }
    Ok("1000 series match the brute-force maximum".into())
}

fn late_cut() -> Outcome {
    let (actual, best) = (0.407, 0.751);
    let (value, xi) = v_timing(&[(-4, 0.5), (-2, best), (0, actual), (3, 0.2)]).ok_or("no differential")?;
    ensure(value.to_bits() == (actual - best).to_bits() && xi == -2, || format!("{value} at {xi}"))?;
    ensure((value - -0.344).abs() <= 1e-15, || format!("{value} != -0.344"))?;

    let table = generate(&late_cut_play()).map_err(|e| e.to_string())?;
    let seq = detect_sequences(&table, &DetectionConfig::default())
        .into_iter()
        .map(|d| d.sequence)
        .find(|s| s.player_id == 2)
        .ok_or("receiver cut not detected")?;
    let report = sweep(
        &table,
        &seq,
        DefenderRule::ClosestAtOnset,
        SweepMode::Full,
        &TimingParams::default(),
        &ControlParams::default(),
        &Grid::default(),
    )
    .map_err(|e| e.to_string())?;
    let (vt, bx) = (report.v_timing.ok_or("no v_timing")?, report.best_xi.ok_or("no best xi")?);
    ensure(bx < 0 && vt < 0.0, || format!("fixture gave best xi {bx}, V_timing {vt}"))?;
    Ok(format!("0.407 - 0.751 = {value}; fixture best xi {bx}, V_timing {vt:.4}"))
}

const CUTTER: u8 = 4;

/// Cutter at rest except for the given (vel, acc) per frame; 90 frames.
fn cutter_table(kin: impl Fn(u32) -> (Vec2, Vec2), holder_at: Option<u32>) -> FrameTable {
    formation_table(90, |s| {
        if s.id == CUTTER {
            (s.vel, s.acc) = kin(s.frame);
        }
        if holder_at == Some(s.frame) && s.id <= 7 {
            s.holder = s.id == CUTTER;
        }
    })
}

fn unit(deg: f64) -> Vec2 {
    Vec2::new(deg.to_radians().cos(), deg.to_radians().sin())
}

fn onset_found(table: &FrameTable, cfg: &DetectionConfig) -> bool {
    detect_initiations(table, cfg)
        .iter()
        .any(|i| i.player_id == CUTTER && i.t0 == 45)
}

/// Each clause evaluated just below and just above its threshold.
/// Returns (clause, outcome below, outcome above) for `cfg`.
fn clause_flips(cfg: &DetectionConfig) -> Vec<(&'static str, bool, bool)> {
    let lax = DetectionConfig {
        fwd_turn_max: 180.0,
        fwd_mean_dev_max: 180.0,
        ..*cfg
    };
    let at = |f: u32, v: Vec2, a: Vec2| move |t: u32| if t == f { (v, a) } else { (Vec2::ZERO, Vec2::ZERO) };
    let mut out = Vec::new();

    let accel = |m: f64| onset_found(&cutter_table(at(45, unit(0.0), unit(0.0) * m), None), cfg);
    out.push(("acceleration", accel(cfg.accel_min * 0.95), accel(cfg.accel_min * 1.05)));

    let strong = cfg.accel_min * 1.5;
    let hold = |k: f64| onset_found(&cutter_table(at(45, unit(0.0), unit(0.0) * strong), Some(45 - k as u32)), cfg);
    let n = f64::from(cfg.no_hold_frames);
    out.push(("no recent hold", hold((n * 0.95).floor()), hold((n * 1.05).ceil())));

    let angle = |deg: f64| onset_found(&cutter_table(at(45, unit(0.0), unit(deg) * strong), None), cfg);
    out.push(("velocity-acceleration angle", !angle(cfg.init_angle_max * 0.95), !angle(cfg.init_angle_max * 1.05)));

    // Forward extension: steady 5 m/s run from 45, one altered frame at 50.
    let fwd = |cfg: &DetectionConfig, odd: Vec2| {
        let t = cutter_table(
            |f| match f {
                50 => (odd, Vec2::ZERO),
                45..=60 => (unit(0.0) * 5.0, Vec2::ZERO),
                _ => (Vec2::ZERO, Vec2::ZERO),
            },
            None,
        );
        extend_forward(&t, MovementSequence::at(0, CUTTER, 45), cfg).end >= 50
    };
    let s = cfg.fwd_speed_min;
    out.push(("forward speed", fwd(cfg, unit(0.0) * (s * 0.95)), fwd(cfg, unit(0.0) * (s * 1.05))));
    let only_turn = DetectionConfig { fwd_mean_dev_max: 180.0, ..*cfg };
    let turn = |deg: f64| fwd(&only_turn, unit(deg) * 5.0);
    // Past the limit the run stops; the flip is inverted relative to the others.
    out.push(("forward turn", !turn(cfg.fwd_turn_max * 0.95), !turn(cfg.fwd_turn_max * 1.05)));
    let only_mean = DetectionConfig { fwd_turn_max: 180.0, ..*cfg };
    let dev = |deg: f64| fwd(&only_mean, unit(deg) * 5.0);
    out.push(("forward mean direction", !dev(cfg.fwd_mean_dev_max * 0.95), !dev(cfg.fwd_mean_dev_max * 1.05)));

    // Backward extension: onset at 45 with speed 1, one prior frame at 44.
    let bwd = |speed44: f64| {
        let t = cutter_table(
            |f| match f {
                44 => (unit(0.0) * speed44, Vec2::ZERO),
                45 => (unit(0.0), unit(0.0) * strong),
                _ => (Vec2::ZERO, Vec2::ZERO),
            },
            None,
        );
        extend_backward(&t, MovementSequence::at(0, CUTTER, 45), &lax).start == 44
    };
    let b = cfg.bwd_speed_min;
    out.push(("backward speed", bwd(b * 0.95), bwd(b * 1.05)));
    let d = cfg.bwd_decel_max;
    out.push(("backward slow-down", !bwd(1.0 + d * 0.95), !bwd(1.0 + d * 1.05)));

    // Crowding at the sequence end: two teammates placed relative to the cutter.
    let crowd = |offsets: [Vec2; 2]| {
        let me = Vec2::new(50.0, 18.0);
        let t = formation_table(3, |s| match s.id {
            CUTTER => {
                s.pos = me;
                s.vel = unit(0.0) * 5.0;
            }
            2 => s.pos = me + offsets[0],
            3 => s.pos = me + offsets[1],
            _ => {}
        });
        !evaluate_exclusions(&t, &MovementSequence::at(0, CUTTER, 1), cfg).retained
    };
    let r = cfg.excl_radius;
    let behind = |dist: f64| crowd([unit(160.0) * dist, unit(-160.0) * dist]);
    out.push(("exclusion radius", !behind(r * 0.95), !behind(r * 1.05)));
    let half = cfg.excl_cone / 2.0;
    let ahead = |deg: f64| crowd([unit(deg) * (r * 2.0), unit(-deg) * (r * 2.0)]);
    out.push(("exclusion cone", !ahead(half * 0.95), !ahead(half * 1.05)));
    out
}

fn detection_thresholds() -> Outcome {
    let default = DetectionConfig::default();
    let scaled = DetectionConfig {
        accel_min: default.accel_min * 1.2,
        no_hold_frames: 36,
        init_angle_max: default.init_angle_max * 0.8,
        fwd_speed_min: default.fwd_speed_min * 1.2,
        fwd_turn_max: default.fwd_turn_max * 1.2,
        fwd_mean_dev_max: default.fwd_mean_dev_max * 0.8,
        bwd_speed_min: default.bwd_speed_min * 1.2,
        bwd_decel_max: default.bwd_decel_max * 1.2,
        excl_radius: default.excl_radius * 1.2,
        excl_cone: default.excl_cone * 0.8,
    };
    let mut count = 0;
    for (name, cfg) in [("default", default), ("scaled", scaled)] {
        for (clause, below, above) in clause_flips(&cfg) {
            ensure(!below && above, || format!("{name} {clause}: below {below}, above {above}"))?;
            count += 1;
        }
    }
    Ok(format!("{count} clause flips at the configured thresholds"))
}

/// Reference Kolmogorov survival function: the alternating series summed to
/// underflow.
fn kolmogorov_reference(lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..100_000u32 {
        let k = f64::from(k);
        let term = (-2.0 * k * k * lambda * lambda).exp();
        if term == 0.0 {
            break;
        }
        sum += if k % 2.0 == 1.0 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Midrank sum of `a` in the pooled sample, and the tie term of the pool.
fn rank_sum(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let rank = |x: f64| {
        let below = pooled.iter().filter(|&&y| y < x).count() as f64;
        let same = pooled.iter().filter(|&&y| y == x).count() as f64;
        below + (same + 1.0) / 2.0
    };
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    for x in &pooled {
        *counts.entry(x.to_bits()).or_default() += 1.0;
    }
    let ties = counts.values().map(|t| t * t * t - t).sum();
    (a.iter().map(|&x| rank(x)).sum(), ties)
}

fn statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (mut worst_ks, mut worst_mw): (f64, f64) = (0.0, 0.0);
    for i in 0..100 {
        let draw = |rng: &mut ChaCha8Rng, shift: f64| -> Vec<f64> {
            (0..20)
                .map(|_| {
                    if i % 2 == 0 {
                        f64::from(rng.random_range(0..12u8)) + shift.round()
                    } else {
                        rng.random::<f64>() * 10.0 + shift
                    }
                })
                .collect()
        };
        let shift = rng.random_range(0.0..4.0);
        let a = draw(&mut rng, shift);
        let b = draw(&mut rng, 0.0);
        let (n, m) = (a.len(), b.len());
        let nm = (n * m) as f64;

        let mut gap = 0i64;
        for &x in a.iter().chain(&b) {
            let fa = a.iter().filter(|&&y| y <= x).count() as i64;
            let fb = b.iter().filter(|&&y| y <= x).count() as i64;
            gap = gap.max((fa * m as i64 - fb * n as i64).abs());
        }
        let d = gap as f64 / nm;
        let gt = a.iter().map(|&x| b.iter().filter(|&&y| x > y).count()).sum::<usize>() as f64;
        let lt = a.iter().map(|&x| b.iter().filter(|&&y| x < y).count()).sum::<usize>() as f64;
        let u = gt + (nm - gt - lt) / 2.0;
        let delta = (gt - lt) / nm;

        let ks = ks_two_sample(&a, &b).map_err(|e| e.to_string())?;
        let mw = mann_whitney_u(&a, &b).map_err(|e| e.to_string())?;
        let cd = cliffs_delta(&a, &b).map_err(|e| e.to_string())?;
        ensure(ks.d == d && mw.u == u && cd == delta, || {
            format!("sample {i}: D {} / {d}, U {} / {u}, delta {cd} / {delta}", ks.d, mw.u)
        })?;

        let lambda = (nm / (n + m) as f64).sqrt() * d;
        worst_ks = worst_ks.max((ks.p - kolmogorov_reference(lambda)).abs());
        let (w, ties) = rank_sum(&a, &b);
        let u_ranks = w - (n * (n + 1)) as f64 / 2.0;
        ensure(u_ranks == u, || format!("sample {i}: rank-sum U {u_ranks} vs {u}"))?;
        let total = (n + m) as f64;
        let sigma = (nm / 12.0 * (total + 1.0 - ties / (total * (total - 1.0)))).sqrt();
        let z = ((u_ranks - nm / 2.0).abs() - 0.5).max(0.0) / sigma;
        let p_ref = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
        worst_mw = worst_mw.max((mw.p - p_ref).abs());
    }
    ensure(worst_ks <= 1e-6, || format!("KS p off by {worst_ks:e}"))?;
    ensure(worst_mw <= 1e-6, || format!("Mann-Whitney p off by {worst_mw:e}"))?;

    let a: Vec<f64> = (0..20).map(f64::from).collect();
    let high: Vec<f64> = (100..120).map(f64::from).collect();
    let same = (ks_two_sample(&a, &a), mann_whitney_u(&a, &a), cliffs_delta(&a, &a));
    let (Ok(ks), Ok(mw), Ok(cd)) = same else {
        return Err("identical samples rejected".into());
    };
    ensure(ks.d == 0.0 && ks.p == 1.0 && mw.u == 200.0 && mw.p == 1.0 && cd == 0.0, || {
        format!("identical: D {} p {} U {} p {} delta {cd}", ks.d, ks.p, mw.u, mw.p)
    })?;
    let up = (ks_two_sample(&high, &a), mann_whitney_u(&high, &a), cliffs_delta(&high, &a));
    let down = (mann_whitney_u(&a, &high), cliffs_delta(&a, &high));
    let (Ok(ks), Ok(mw), Ok(cd)) = up else {
        return Err("separated samples rejected".into());
    };
    let (Ok(mw_down), Ok(cd_down)) = down else {
        return Err("separated samples rejected".into());
    };
    ensure(ks.d == 1.0 && mw.u == 400.0 && cd == 1.0 && mw_down.u == 0.0 && cd_down == -1.0, || {
        format!("separated: D {} U {} / {} delta {cd} / {cd_down}", ks.d, mw.u, mw_down.u)
    })?;
    Ok(format!("exact D/U/delta; p within {:.1e} (KS), {:.1e} (U)", worst_ks, worst_mw))
}

fn performance() -> Outcome {
    // A long straight cut so the scored span covers 130 frames.
    let play = ScriptedPlay {
        duration: 200,
        players: vec![
            PlayerScript::new(CUTTER)
                .start(Vec2::new(10.0, 8.0))
                .then(Motion::Hold { frames: 20 })
                .then(Motion::Accelerate { accel: Vec2::new(2.0, 0.5), frames: 20 })
                .then(Motion::Accelerate { accel: Vec2::new(5.0, 1.2), frames: 12 })
                .then(Motion::Cruise { frames: 130 }),
            PlayerScript::new(CUTTER + 7)
                .start(Vec2::new(11.5, 8.0))
                .then(Motion::Hold { frames: 23 })
                .then(Motion::Accelerate { accel: Vec2::new(2.0, 0.5), frames: 20 })
                .then(Motion::Accelerate { accel: Vec2::new(4.5, 1.1), frames: 12 })
                .then(Motion::Cruise { frames: 130 }),
        ],
        ..Default::default()
    };
    let table = generate(&play).map_err(|e| e.to_string())?;
    let t0 = 40;
    let seq = MovementSequence {
        possession_id: 0,
        player_id: CUTTER,
        start: t0,
        t0,
        end: t0 + 99,
    };
    let (timing, control, grid) = (TimingParams::default(), ControlParams::default(), Grid::default());
    let started = Instant::now();
    let report = sweep(&table, &seq, DefenderRule::ClosestAtOnset, SweepMode::Full, &timing, &control, &grid)
        .map_err(|e| e.to_string())?;
    let swept = started.elapsed();
    ensure(report.v_scenario.len() == 31, || "expected 31 scenarios".into())?;

    let frame = table.frame(100).ok_or("missing frame")?;
    let started = Instant::now();
    let values = layer_values(frame, &grid, &grid.all_cells(), Layer::Wuppcf, Some(CUTTER), &control);
    let image = heatmap(&values, &grid, 4);
    let rendered = started.elapsed();
    ensure(image.width() > 0, || "empty image".into())?;
    ensure(swept < Duration::from_secs(5), || format!("sweep took {swept:?}"))?;
    ensure(rendered < Duration::from_secs(2), || format!("render took {rendered:?}"))?;
    Ok(format!(
        "sweep of {} frames x 31 in {:.2} s, full-field render in {:.3} s",
        report.scenarios[0].frames.len(),
        swept.as_secs_f64(),
        rendered.as_secs_f64()
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ultitiming"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn read_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        // The resolved config records the thread count itself.
        if name != "resolved-config.toml" {
            files.insert(name, std::fs::read(entry.path()).map_err(|e| e.to_string())?);
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("plays.csv");
    let data_str = data.to_str().ok_or("non-UTF-8 path")?;
    run_cli(&["--out-dir", tmp.path().to_str().unwrap(), "synth", "--plays", "3", "--seed", "12", "--output", data_str])?;
    let mut outputs = Vec::new();
    for jobs in ["1", "8"] {
        let dir = tmp.path().join(format!("jobs{jobs}"));
        let dir_str = dir.to_str().unwrap();
        run_cli(&["--jobs", jobs, "--out-dir", dir_str, "sweep", data_str, "--frame-csv", "--team-values"])?;
        outputs.push(read_outputs(&dir)?);
    }
    let reports = outputs[0].keys().filter(|k| k.starts_with("report_")).count();
    ensure(reports > 0, || "no reports written".into())?;
    ensure(outputs[0] == outputs[1], || {
        let differ: Vec<&String> = outputs[0]
            .keys()
            .filter(|k| outputs[1].get(*k) != outputs[0].get(*k))
            .collect();
        format!("outputs differ: {differ:?}")
    })?;
    Ok(format!("{} files identical ({reports} reports)", outputs[0].len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("counterfactual continuity", continuity),
        ("zero-shift identity", zero_identity),
        ("control conservation", conservation),
        ("reaction-time bounds", reaction_bounds),
        ("screen arm anchor", arm_anchor),
        ("interception oracle", intercept_oracle),
        ("window maximum oracle", window_oracle),
        ("late-cut differential", late_cut),
        ("detection thresholds", detection_thresholds),
        ("statistics oracles", statistics),
        ("performance", performance),
        ("determinism across thread counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
