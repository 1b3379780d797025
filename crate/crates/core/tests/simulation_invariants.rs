//! Whole-session invariants of the tick loop with synthetic subjects.

use nalgebra::{Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trailmaker::cohort::{derive_seed, SubjectPreset};
use trailmaker::forcefield::AssistConfig;
use trailmaker::geometry::{builtin_shape, Shape};
use trailmaker::persistence::{replay, SessionRecord};
use trailmaker::simulation::{
    run_engine, simulate_session, AssistMode, Engine, IntentSource, PenState, SafetyCause, SessionConfig, SessionMeta,
    SubjectKind, SubjectModel, SPEED_LIMIT,
};

const SAFETY_SESSIONS: u64 = 50;
const EFFECT_SESSIONS: u64 = 20;
/// Ticks discarded before the plane is considered settled; the steady-state
/// figure is the mean |z| over the rest.
const SETTLE_TICKS: usize = 30;
const PLANE_TOL: f64 = 0.1;

fn preset(name: &str) -> SubjectPreset {
    SubjectPreset::named(name).unwrap()
}

fn short(mode: AssistMode, loops: u32) -> SessionConfig {
    SessionConfig {
        mode,
        target_loops: loops,
        timeout_s: 60.0,
        ..SessionConfig::default()
    }
}

fn assert_safe(r: &SessionRecord) {
    for t in &r.ticks {
        assert!(
            t.tripped || t.pen_velocity.norm() <= SPEED_LIMIT,
            "{}: untripped tick at {} s moving {} mm/s",
            r.header.session_id,
            t.t,
            t.pen_velocity.norm()
        );
    }
    if let Some(i) = r.ticks.iter().position(|t| t.pen_velocity.norm() > SPEED_LIMIT) {
        assert!(r.ticks[i].tripped);
        assert_eq!(r.safety().cause, SafetyCause::Overspeed);
    }
}

/// Calibrated subjects plus deliberately stiff ones, so that some sessions
/// reach the limit.
#[test]
fn no_untripped_tick_exceeds_the_speed_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut tripped = 0;
    for seed in 0..SAFETY_SESSIONS {
        let shape = Shape::ALL[seed as usize % Shape::ALL.len()];
        let trail = builtin_shape(shape, shape.default_size()).unwrap();
        let mode = AssistMode::ALL[seed as usize % 2];
        let model = match seed % 3 {
            0 => preset("healthy").sample(seed),
            1 => preset("patient").sample(seed),
            _ => SubjectModel {
                noise_sigma: rng.random_range(0.0..0.5),
                jerk_rate: rng.random_range(0.0..2.0),
                ..SubjectModel::quiet(SubjectKind::Healthy, rng.random_range(0.5..3.0), rng.random_range(20.0..60.0))
            },
        };
        let r = simulate_session(&model, &trail, &short(mode, 3), seed).unwrap();
        assert_safe(&r);
        tripped += usize::from(r.safety().tripped);
    }
    assert!(tripped > 0, "no session reached the limit; the check was not exercised");
    assert!(tripped < SAFETY_SESSIONS as usize);
}

/// Constant-direction force ramping at `RAMP` N/s, with every field term zero.
struct Ramp;

const RAMP: f64 = 5.0;

impl IntentSource for Ramp {
    fn intent(&mut self, _pen: &PenState, t: f64) -> Vector3<f64> {
        Vector3::new(0.6, 0.8, 0.0) * (RAMP * t)
    }
}

#[test]
fn scripted_overspeed_trips_within_one_tick() {
    let trail = builtin_shape(Shape::Hexagon, 60.0).unwrap();
    let start = trail.targets()[0].position;
    let pen = PenState::at_rest(Point3::new(start.x, start.y, 0.0));
    let assist = AssistConfig {
        effective_weight: 0.0,
        ..AssistConfig::default()
    };
    let config = short(AssistMode::NoAssist, 1000);
    let mut engine = Engine::new(trail.clone(), assist, config, pen).unwrap();
    let r = run_engine(&mut engine, &mut Ramp, &trail, 0, SessionMeta::default()).unwrap();

    // Scalar recurrence of the same integrator, independent of the engine.
    let dt = config.dt();
    let gain = dt * 1000.0 / PenState::DEFAULT_MASS;
    let (mut v, mut k) = (0.0f64, 0u64);
    while v <= SPEED_LIMIT {
        v += (RAMP * k as f64 * dt - PenState::DEFAULT_DAMPING * v) * gain;
        k += 1;
    }
    let crossing = k as f64 * dt;

    let trip = r.safety().trip_time.expect("session must trip");
    assert_eq!(r.safety().cause, SafetyCause::Overspeed);
    assert!((trip - crossing).abs() <= config.tick_period(), "trip {trip} vs crossing {crossing}");
    let first = r.ticks.iter().position(|t| t.tripped).unwrap();
    assert!(r.ticks[first].t - crossing <= config.tick_period() + 1e-12);
    assert!(r.ticks[first].t >= crossing - 1e-12);
    assert!(r.ticks[..first].iter().all(|t| t.pen_velocity.norm() <= SPEED_LIMIT));
    assert_eq!(r.ticks.len(), first + 1, "recording stops at the trip");
}

#[test]
fn identical_inputs_give_identical_logs() {
    let trail = builtin_shape(Shape::LetterB, Shape::LetterB.default_size()).unwrap();
    let model = preset("patient").sample(3);
    let run = |seed| {
        let r = simulate_session(&model, &trail, &short(AssistMode::ContinuousAssist, 2), seed).unwrap();
        let mut out = Vec::new();
        r.write_jsonl(&mut out).unwrap();
        out
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn plane_is_retained_for_calibrated_subjects() {
    let mut worst: f64 = 0.0;
    for (name, n) in [("healthy", 10), ("patient", 11)] {
        for i in 0..n {
            let seed = derive_seed(17, &[i]);
            let model = preset(name).sample(seed);
            for shape in Shape::ALL {
                let trail = builtin_shape(shape, shape.default_size()).unwrap();
                for mode in AssistMode::ALL {
                    let r = simulate_session(&model, &trail, &short(mode, 2), seed).unwrap();
                    let settled = &r.ticks[SETTLE_TICKS.min(r.ticks.len())..];
                    let mean = settled.iter().map(|t| t.pen_position.z.abs()).sum::<f64>() / settled.len() as f64;
                    assert!(mean < PLANE_TOL, "{name} {i} {shape:?} {mode}: mean |z| {mean}");
                    worst = worst.max(mean);
                }
            }
        }
    }
    eprintln!("largest steady-state mean |z|: {worst:.4} mm");
}

#[test]
fn kinetic_energy_decays_without_intent_or_assist() {
    let trail = builtin_shape(Shape::Circle, 60.0).unwrap();
    let assist = AssistConfig {
        k_plane: 0.0,
        effective_weight: 0.0,
        ..AssistConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut pen = PenState::at_rest(Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0));
        pen.velocity = Vector3::new(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), rng.random_range(-5.0..5.0));
        let mut engine = Engine::new(trail.clone(), assist, SessionConfig::default(), pen).unwrap();
        let mut last = engine.pen().kinetic_energy();
        for _ in 0..120 {
            engine.advance(&mut trailmaker::simulation::Passive).unwrap();
            let ke = engine.pen().kinetic_energy();
            assert!(ke <= last);
            last = ke;
        }
    }
}

#[test]
fn assistance_lowers_deviation_and_raises_speed_on_every_shape() {
    let patient = preset("patient");
    for shape in Shape::ALL {
        let trail = builtin_shape(shape, shape.default_size()).unwrap();
        let mut sums = [[0.0; 2]; 2];
        for i in 0..EFFECT_SESSIONS {
            let seed = derive_seed(2024, &[i]);
            let model = patient.sample(seed);
            for (m, mode) in AssistMode::ALL.into_iter().enumerate() {
                let r = simulate_session(&model, &trail, &short(mode, 3), seed).unwrap();
                assert!(!r.safety().tripped, "{shape:?} {mode} {i} tripped");
                let s = trailmaker::analytics::MetricSummary::from_record(&r).unwrap();
                sums[m][0] += s.average_deviation_mm;
                sums[m][1] += s.speed_mm_s;
            }
        }
        let [off, on] = sums;
        assert!(on[0] < off[0], "{shape:?}: deviation {} vs {}", on[0], off[0]);
        assert!(on[1] > off[1], "{shape:?}: speed {} vs {}", on[1], off[1]);
    }
}

/// A strongly biased patient used to stall at the first corner of the
/// triangle; every loop must now complete.
#[test]
fn biased_patient_completes_triangle_loops() {
    let trail = builtin_shape(Shape::Triangle, Shape::Triangle.default_size()).unwrap();
    for side in [-1.0, 1.0] {
        for mode in AssistMode::ALL {
            let model = SubjectModel {
                bias_offset: Vector2::new(4.5 * side, 0.0),
                ..SubjectModel::quiet(SubjectKind::Patient, 1.0, 0.4)
            };
            let r = simulate_session(&model, &trail, &short(mode, 3), 1).unwrap();
            assert_eq!(r.loops_completed(), 3, "side {side} {mode}");
            assert!(replay(&r).unwrap().is_consistent());
        }
    }
}
