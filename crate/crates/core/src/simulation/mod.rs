//! The tick loop: composed field forces and a subject's intent acting on the
//! pen, integrated at `tick_hz * internal_substeps`, recorded at `tick_hz`.

mod approach;
mod loops;
mod plant;
mod safety;
mod subject;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use approach::{ApproachProfile, APPROACH_MAX_RATE, APPROACH_PEAK_SPEED, ARRIVAL_TOLERANCE};
pub use loops::{count_loops, LoopCounter};
pub use plant::{step, PenState};
pub use safety::{safety_check, SafetyCause, SafetyState, SPEED_LIMIT};
pub use subject::{Subject, SubjectKind, SubjectModel, SPIKE_DURATION, SPIKE_GAIN};

use crate::forcefield::{compose_with_nearest, AssistConfig, ForceError};
use crate::geometry::{GeometryError, Trail};
use crate::persistence::{PersistenceError, SessionFooter, SessionHeader, SessionRecord, Tick, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("integration error: {0}")]
    Integration(String),
    #[error("invalid subject model: {0}")]
    InvalidModel(String),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

/// Anything that pushes on the pen besides the field: a synthetic subject, a
/// scripted test driver, or a tracker following live pointer input.
pub trait IntentSource {
    /// Called once at the start of every tick, before the substeps.
    fn begin_tick(&mut self, _t: f64) {}
    /// Force (N) applied during the substep starting at `t`.
    fn intent(&mut self, pen: &PenState, t: f64) -> Vector3<f64>;
}

/// No intent at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passive;

impl IntentSource for Passive {
    fn intent(&mut self, _pen: &PenState, _t: f64) -> Vector3<f64> {
        Vector3::zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssistMode {
    NoAssist,
    ContinuousAssist,
}

impl AssistMode {
    pub const ALL: [AssistMode; 2] = [AssistMode::NoAssist, AssistMode::ContinuousAssist];

    pub fn as_str(self) -> &'static str {
        match self {
            AssistMode::NoAssist => "no_assist",
            AssistMode::ContinuousAssist => "continuous_assist",
        }
    }
}

impl std::fmt::Display for AssistMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AssistMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AssistMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub mode: AssistMode,
    pub target_loops: u32,
    pub tick_hz: u32,
    pub internal_substeps: u32,
    /// s
    pub timeout_s: f64,
    /// mm
    pub loop_capture_radius: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: AssistMode::NoAssist,
            target_loops: 10,
            tick_hz: 30,
            internal_substeps: 10,
            timeout_s: 600.0,
            loop_capture_radius: 6.0,
        }
    }
}

impl SessionConfig {
    pub fn with_mode(mode: AssistMode) -> Self {
        SessionConfig {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.to_string()));
        if self.target_loops < 1 {
            return bad("target_loops must be at least 1");
        }
        if self.tick_hz < 1 || self.internal_substeps < 1 {
            return bad("tick_hz and internal_substeps must be at least 1");
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return bad("timeout_s must be positive");
        }
        if !(self.loop_capture_radius.is_finite() && self.loop_capture_radius > 0.0) {
            return bad("loop_capture_radius must be positive");
        }
        Ok(())
    }

    pub fn tick_period(&self) -> f64 {
        1.0 / f64::from(self.tick_hz)
    }

    /// Integration step (s).
    pub fn dt(&self) -> f64 {
        1.0 / (f64::from(self.tick_hz) * f64::from(self.internal_substeps))
    }
}

/// Owns the pen and everything acting on it for one session.
#[derive(Debug, Clone)]
pub struct Engine {
    trail: Trail,
    assist: AssistConfig,
    assist_on: bool,
    config: SessionConfig,
    stylus_weight: f64,
    pen: PenState,
    safety: SafetyState,
    loops: LoopCounter,
    /// Loops completed on trails replaced earlier in the session.
    loops_before: u32,
    tick: u64,
    approach: Option<(ApproachProfile, f64)>,
}

impl Engine {
    /// The pen is loaded by its own weight, `assist.effective_weight` by
    /// default, which gravity compensation partly cancels.
    pub fn new(trail: Trail, assist: AssistConfig, config: SessionConfig, pen: PenState) -> Result<Self, SimulationError> {
        config.validate()?;
        assist.validate()?;
        let mut loops = LoopCounter::new(config.loop_capture_radius);
        loops.observe(pen.position.xy(), trail.targets());
        Ok(Engine {
            trail,
            stylus_weight: assist.effective_weight,
            assist,
            assist_on: config.mode == AssistMode::ContinuousAssist,
            config,
            pen,
            safety: SafetyState::default(),
            loops,
            loops_before: 0,
            tick: 0,
            approach: None,
        })
    }

    pub fn with_stylus_weight(mut self, weight: f64) -> Self {
        self.stylus_weight = weight;
        self
    }

    pub fn trail(&self) -> &Trail {
        &self.trail
    }

    pub fn pen(&self) -> &PenState {
        &self.pen
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn assist(&self) -> &AssistConfig {
        &self.assist
    }

    pub fn assist_on(&self) -> bool {
        self.assist_on
    }

    pub fn safety(&self) -> SafetyState {
        self.safety
    }

    pub fn loops(&self) -> u32 {
        self.loops_before + self.loops.loops()
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    /// Session time of the current state (s).
    pub fn time(&self) -> f64 {
        self.tick as f64 / f64::from(self.config.tick_hz)
    }

    pub fn is_pulling(&self) -> bool {
        self.approach.is_some()
    }

    /// Target loops reached, timed out, or tripped.
    pub fn is_finished(&self) -> bool {
        self.safety.tripped || self.loops() >= self.config.target_loops || self.time() >= self.config.timeout_s
    }

    pub fn set_assist_on(&mut self, on: bool) {
        self.assist_on = on;
    }

    pub fn set_assist_scale(&mut self, scale: f64) -> Result<(), SimulationError> {
        let assist = AssistConfig { scale, ..self.assist };
        assist.validate()?;
        self.assist = assist;
        Ok(())
    }

    /// Replaces the trail. Completed loops are kept; progress through the
    /// current loop restarts, since target order may have changed.
    pub fn set_trail(&mut self, trail: Trail) {
        self.trail = trail;
        self.loops_before += self.loops.loops();
        self.loops = LoopCounter::new(self.config.loop_capture_radius);
        self.loops.observe(self.pen.position.xy(), self.trail.targets());
    }

    /// Starts a kinematic approach to the first target, at z = 0. Returns
    /// false, and leaves the pen alone, when it is already there.
    pub fn pull_to_start(&mut self) -> Result<bool, SimulationError> {
        let first = self
            .trail
            .targets()
            .first()
            .ok_or(GeometryError::InsufficientTargets { found: 0 })?;
        let goal = Point3::new(first.position.x, first.position.y, 0.0);
        let profile = ApproachProfile::new(self.pen.position, goal);
        if profile.is_noop() {
            self.approach = None;
            return Ok(false);
        }
        self.approach = Some((profile, self.time()));
        Ok(true)
    }

    /// Snapshot of the current state as a log tick.
    pub fn observe(&self) -> Result<Tick, SimulationError> {
        let (field, nearest) = compose_with_nearest(&self.pen.position, &self.trail, &self.assist, self.assist_on)?;
        Ok(Tick {
            t: self.time(),
            pen_position: self.pen.position,
            pen_velocity: self.pen.velocity,
            assist_on: self.assist_on,
            assist_scale: self.assist.scale,
            d_s: nearest.distance,
            nearest_segment: nearest.segment_index,
            loops: self.loops(),
            tripped: self.safety.tripped,
            force_breakdown: field,
        })
    }

    /// Advances one tick. After a safety trip the pen no longer moves.
    pub fn advance(&mut self, intent: &mut dyn IntentSource) -> Result<(), SimulationError> {
        let t0 = self.time();
        if !self.safety.tripped {
            if let Some((profile, start)) = self.approach {
                self.advance_approach(&profile, start, t0);
            } else {
                self.integrate(intent, t0)?;
            }
        }
        self.tick += 1;
        if !self.safety.tripped {
            self.loops.observe(self.pen.position.xy(), self.trail.targets());
        }
        Ok(())
    }

    fn advance_approach(&mut self, profile: &ApproachProfile, start: f64, t0: f64) {
        let elapsed = t0 + self.config.tick_period() - start;
        let (position, velocity) = profile.state_at(elapsed);
        self.pen.position = position;
        self.pen.velocity = velocity;
        if elapsed >= profile.duration() {
            self.approach = None;
        }
    }

    fn integrate(&mut self, intent: &mut dyn IntentSource, t0: f64) -> Result<(), SimulationError> {
        let dt = self.config.dt();
        let load = Vector3::new(0.0, -self.stylus_weight, 0.0);
        intent.begin_tick(t0);
        for k in 0..self.config.internal_substeps {
            let t = t0 + f64::from(k) * dt;
            let (field, _) = compose_with_nearest(&self.pen.position, &self.trail, &self.assist, self.assist_on)?;
            let external = intent.intent(&self.pen, t) + load;
            self.pen = step(&self.pen, &external, &field, dt)?;
            let check = safety_check(&self.pen, &field, self.assist.device_cap, t + dt);
            if check.tripped {
                self.safety = check;
                break;
            }
        }
        Ok(())
    }
}

/// Identity and labels written into a simulated session's header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionMeta {
    pub session_id: String,
    pub patient_id: String,
    pub cohort_label: Option<SubjectKind>,
}

/// Runs a synthetic subject on `trail` from rest at the first target until
/// the target loop count, the timeout, or a safety trip, with the default
/// assistance configuration.
pub fn simulate_session(
    model: &SubjectModel,
    trail: &Trail,
    config: &SessionConfig,
    seed: u64,
) -> Result<SessionRecord, SimulationError> {
    let meta = SessionMeta {
        session_id: format!("{}-{}-{seed}", trail.name, config.mode),
        patient_id: format!("{}-{seed}", model.kind),
        cohort_label: Some(model.kind),
    };
    run_session(model, trail, config, &AssistConfig::default(), seed, meta)
}

pub fn run_session(
    model: &SubjectModel,
    trail: &Trail,
    config: &SessionConfig,
    assist: &AssistConfig,
    seed: u64,
    meta: SessionMeta,
) -> Result<SessionRecord, SimulationError> {
    let model = SubjectModel { seed, ..*model };
    let mut subject = Subject::new(model, trail, config.tick_hz)?;
    let start = trail
        .targets()
        .first()
        .ok_or(GeometryError::InsufficientTargets { found: 0 })?
        .position;
    let pen = PenState::at_rest(Point3::new(start.x, start.y, 0.0));
    let mut engine = Engine::new(trail.clone(), *assist, *config, pen)?;
    run_engine(&mut engine, &mut subject, trail, seed, meta)
}

/// Records `engine` driven by `intent` until it finishes.
pub fn run_engine(
    engine: &mut Engine,
    intent: &mut dyn IntentSource,
    trail: &Trail,
    seed: u64,
    meta: SessionMeta,
) -> Result<SessionRecord, SimulationError> {
    let config = *engine.config();
    let header = SessionHeader {
        format_version: FORMAT_VERSION,
        session_id: meta.session_id,
        patient_id: meta.patient_id,
        cohort_label: meta.cohort_label,
        shape_name: trail.name.clone(),
        mode: config.mode,
        tick_hz: config.tick_hz,
        loop_capture_radius: config.loop_capture_radius,
        seed: Some(seed),
        started_at: None,
    };
    let mut record = SessionRecord::new(header, trail.clone());
    record.record_tick(engine.observe()?)?;
    while !engine.is_finished() {
        engine.advance(intent)?;
        record.record_tick(engine.observe()?)?;
    }
    record.close(SessionFooter {
        loops_completed: engine.loops(),
        safety: engine.safety(),
        ended_at: None,
    })?;
    Ok(record)
}
