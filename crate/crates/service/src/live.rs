//! One channel's state: the trail being edited, the pen, and the recorded run
//! between `begin` and its end. Synchronous and deterministic; the hub feeds
//! it commands at tick boundaries and calls [`LiveSession::advance`] once per
//! tick.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use trailmaker::analytics::StreamingMetrics;
use trailmaker::forcefield::AssistConfig;
use trailmaker::geometry::{builtin_shape, Shape, Trail};
use trailmaker::persistence::{
    load_trail, save_trail, PatientProfile, PatientRegistry, SessionFooter, SessionHeader, SessionLogWriter, TrailFile,
    FORMAT_VERSION,
};
use trailmaker::simulation::{AssistMode, Engine, IntentSource, Passive, PenState, SessionConfig};

use crate::config::ServiceConfig;
use crate::protocol::{
    AssistState, Command, EndReason, ErrorCode, Event, Phase, Request, Role, StateUpdate, TargetRef,
};

pub type SharedRegistry = Arc<Mutex<PatientRegistry>>;

/// Source of the timestamps written into session headers and footers.
pub type Clock = fn() -> Option<DateTime<Utc>>;

pub fn wall_clock() -> Option<DateTime<Utc>> {
    Some(Utc::now())
}

pub fn no_clock() -> Option<DateTime<Utc>> {
    None
}

/// A command as applied, with the channel tick it was applied before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub tick: u64,
    pub role: Role,
    pub request_id: Option<u64>,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    /// To the connection that sent the command.
    Reply(Event),
    /// To every connection of the channel.
    Broadcast(Event),
}

struct CommandError {
    code: ErrorCode,
    message: String,
}

fn err(code: ErrorCode, message: impl Into<String>) -> CommandError {
    CommandError {
        code,
        message: message.into(),
    }
}

/// Pulls the pen toward the pen input with a linear spring. The setpoint
/// moves from the previous input to the latest one over the tick, so a
/// cursor sampled at the tick rate does not kick the pen.
#[derive(Debug, Clone, Copy)]
struct Tracker {
    from: Point3<f64>,
    to: Point3<f64>,
    gain: f64,
    tick_start: f64,
    period: f64,
}

impl Tracker {
    fn new(at: Point3<f64>, gain: f64, period: f64) -> Self {
        Tracker {
            from: at,
            to: at,
            gain,
            tick_start: 0.0,
            period,
        }
    }

    fn setpoint(&self, t: f64) -> Point3<f64> {
        let f = ((t - self.tick_start) / self.period).clamp(0.0, 1.0);
        self.from + (self.to - self.from) * f
    }

    fn end_tick(&mut self) {
        self.from = self.to;
    }
}

impl IntentSource for Tracker {
    fn begin_tick(&mut self, t: f64) {
        self.tick_start = t;
    }

    fn intent(&mut self, pen: &PenState, t: f64) -> Vector3<f64> {
        (self.setpoint(t) - pen.position) * self.gain
    }
}

struct Run {
    id: String,
    engine: Engine,
    tracker: Tracker,
    writer: SessionLogWriter,
    metrics: StreamingMetrics,
}

pub struct LiveSession {
    id: String,
    config: Arc<ServiceConfig>,
    registry: SharedRegistry,
    clock: Clock,
    trail: Trail,
    assist: AssistConfig,
    assist_on: bool,
    pen: PenState,
    /// Engine used outside runs, for pull to start and the displayed forces.
    idle: Option<Engine>,
    run: Option<Run>,
    phase: Phase,
    tick: u64,
    runs: u32,
    journal: Vec<JournalEntry>,
}

/// Trail and file names: letters, digits, `-` and `_`.
fn check_name(name: &str) -> Result<(), CommandError> {
    let ok = !name.is_empty() && name.len() <= 64 && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(err(ErrorCode::InvalidPayload, format!("invalid name `{name}`: use 1-64 letters, digits, `-` or `_`")))
    }
}

fn finite(values: &[f64]) -> Result<(), CommandError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(err(ErrorCode::InvalidPayload, "coordinates must be finite"))
    }
}

impl LiveSession {
    pub fn new(id: impl Into<String>, config: Arc<ServiceConfig>, registry: SharedRegistry, clock: Clock) -> Self {
        let assist = config.assist;
        LiveSession {
            id: id.into(),
            config,
            registry,
            clock,
            trail: Trail::new("untitled"),
            assist,
            assist_on: false,
            pen: PenState::at_rest(Point3::origin()),
            idle: None,
            run: None,
            phase: Phase::Editing,
            tick: 0,
            runs: 0,
            journal: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn trail(&self) -> &Trail {
        &self.trail
    }

    pub fn pen(&self) -> &PenState {
        &self.pen
    }

    pub fn is_running(&self) -> bool {
        self.run.is_some()
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    /// Applies one command now. The reply is always first: an `ack` or an
    /// `error`.
    pub fn apply(&mut self, role: Role, request: Request) -> Vec<Output> {
        self.journal.push(JournalEntry {
            tick: self.tick,
            role,
            request_id: request.request_id,
            command: request.command.clone(),
        });
        let name = request.command.name();
        match self.execute(role, request.command) {
            Ok(events) => {
                let mut out = vec![Output::Reply(Event::Ack {
                    request_id: request.request_id,
                    command: name.to_string(),
                })];
                out.extend(events.into_iter().map(Output::Broadcast));
                out
            }
            Err(e) => vec![Output::Reply(Event::Error {
                request_id: request.request_id,
                command: Some(name.to_string()),
                code: e.code,
                message: e.message,
            })],
        }
    }

    fn execute(&mut self, role: Role, command: Command) -> Result<Vec<Event>, CommandError> {
        match self.phase {
            Phase::Halted => {
                return Err(err(
                    ErrorCode::Shutdown,
                    "session halted by a safety shutdown; open a new session to continue",
                ))
            }
            Phase::Closed => return Err(err(ErrorCode::State, "server is shutting down")),
            Phase::Editing | Phase::Running => {}
        }
        let required = command.required_role();
        if role != Role::Server && role != required {
            return Err(err(
                ErrorCode::Role,
                format!("{} requires the {} role, connection is {}", command.name(), required.as_str(), role.as_str()),
            ));
        }
        let geometry = |e: trailmaker::geometry::GeometryError| err(ErrorCode::Geometry, e.to_string());
        match command {
            Command::AddTarget { x, y } => {
                finite(&[x, y])?;
                self.trail.add_target(Point2::new(x, y)).map_err(geometry)?;
                self.trail_edited()
            }
            Command::MoveTarget { target_id, x, y } => {
                finite(&[x, y])?;
                self.trail.move_target(target_id, Point2::new(x, y)).map_err(geometry)?;
                self.trail_edited()
            }
            Command::GenerateSegments => {
                self.trail.generate_segments().map_err(geometry)?;
                self.trail_edited()
            }
            Command::SetLooping { looping } => {
                self.trail.set_looping(looping).map_err(geometry)?;
                self.trail_edited()
            }
            Command::SaveTrail { name } => {
                check_name(&name)?;
                let dir = self.config.trails_dir();
                fs::create_dir_all(&dir).map_err(|e| err(ErrorCode::Persistence, format!("{}: {e}", dir.display())))?;
                self.trail.name = name.clone();
                save_trail(dir.join(format!("{name}.json")), &self.trail)
                    .map_err(|e| err(ErrorCode::Persistence, e.to_string()))?;
                Ok(vec![self.trail_update()])
            }
            Command::LoadTrail { name } => {
                check_name(&name)?;
                self.trail = self.find_trail(&name)?;
                self.trail_edited()
            }
            Command::ClearBoard => {
                if self.run.is_some() {
                    return Err(err(ErrorCode::State, "cannot clear the board during a run"));
                }
                self.trail.clear();
                self.trail_edited()
            }
            Command::Begin {
                patient_id,
                mode,
                target_loops,
            } => self.begin(patient_id, mode, target_loops),
            Command::PullToStart => self.pull_to_start(),
            Command::SetAssistScale { scale } => {
                let assist = AssistConfig { scale, ..self.assist };
                assist
                    .validate()
                    .map_err(|e| err(ErrorCode::InvalidPayload, e.to_string()))?;
                self.assist = assist;
                for engine in self.engines() {
                    engine.set_assist_scale(scale).expect("validated above");
                }
                Ok(Vec::new())
            }
            Command::AssistOn | Command::AssistOff => {
                self.assist_on = matches!(command, Command::AssistOn);
                let on = self.assist_on;
                for engine in self.engines() {
                    engine.set_assist_on(on);
                }
                Ok(Vec::new())
            }
            Command::PenInput { x, y, z } => {
                finite(&[x, y, z])?;
                let run = self
                    .run
                    .as_mut()
                    .ok_or_else(|| err(ErrorCode::State, "pen_input is accepted only between begin and the end of a run"))?;
                run.tracker.to = Point3::new(x, y, z);
                Ok(Vec::new())
            }
            Command::EndSession => {
                if self.run.is_none() {
                    return Err(err(ErrorCode::State, "no run in progress"));
                }
                Ok(self.finish_run(EndReason::Requested))
            }
            Command::RegisterPatient {
                patient_id,
                cohort_label,
            } => {
                check_name(&patient_id)?;
                let mut registry = self.registry.lock().expect("registry lock");
                if registry.get(&patient_id).is_some() {
                    return Err(err(ErrorCode::Registry, format!("patient `{patient_id}` is already registered")));
                }
                registry.upsert(PatientProfile::new(patient_id, cohort_label));
                self.save_registry(&registry)?;
                Ok(Vec::new())
            }
            Command::UpdateFmScore {
                patient_id,
                date,
                score,
            } => {
                let mut registry = self.registry.lock().expect("registry lock");
                registry
                    .update_fm_score(&patient_id, date, score)
                    .map_err(|e| err(ErrorCode::Registry, e.to_string()))?;
                self.save_registry(&registry)?;
                Ok(Vec::new())
            }
        }
    }

    fn save_registry(&self, registry: &PatientRegistry) -> Result<(), CommandError> {
        let path = self.config.registry_path();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| err(ErrorCode::Persistence, format!("{}: {e}", dir.display())))?;
        }
        registry
            .save(&path)
            .map_err(|e| err(ErrorCode::Persistence, e.to_string()))
    }

    fn find_trail(&self, name: &str) -> Result<Trail, CommandError> {
        let path = self.config.trails_dir().join(format!("{name}.json"));
        if path.exists() {
            return load_trail(&path).map_err(|e| err(ErrorCode::Persistence, e.to_string()));
        }
        match name.parse::<Shape>() {
            Ok(shape) => builtin_shape(shape, shape.default_size()).map_err(|e| err(ErrorCode::Geometry, e.to_string())),
            Err(_) => Err(err(ErrorCode::NotFound, format!("no saved trail or reference shape named `{name}`"))),
        }
    }

    fn engines(&mut self) -> impl Iterator<Item = &mut Engine> {
        self.run.as_mut().map(|r| &mut r.engine).into_iter().chain(self.idle.as_mut())
    }

    fn generated(&self) -> bool {
        !self.trail.segments().is_empty() && !self.trail.is_stale()
    }

    fn idle_config(&self) -> SessionConfig {
        SessionConfig {
            mode: if self.assist_on {
                AssistMode::ContinuousAssist
            } else {
                AssistMode::NoAssist
            },
            ..self.config.session
        }
    }

    fn rebuild_idle(&mut self) {
        self.idle = if self.generated() {
            Engine::new(self.trail.clone(), self.assist, self.idle_config(), self.pen)
                .ok()
                .map(|mut e| {
                    e.set_assist_on(self.assist_on);
                    e
                })
        } else {
            None
        };
    }

    /// Propagates a trail change. During a run the trail stays generated and
    /// every change becomes a new snapshot in the log.
    fn trail_edited(&mut self) -> Result<Vec<Event>, CommandError> {
        if let Some(run) = self.run.as_mut() {
            if self.trail.is_stale() {
                self.trail
                    .generate_segments()
                    .map_err(|e| err(ErrorCode::Geometry, e.to_string()))?;
            }
            run.engine.set_trail(self.trail.clone());
            run.writer
                .record_trail(&self.trail)
                .map_err(|e| err(ErrorCode::Persistence, e.to_string()))?;
        } else {
            self.rebuild_idle();
        }
        Ok(vec![self.trail_update()])
    }

    pub fn trail_update(&self) -> Event {
        Event::TrailUpdate {
            trail: TrailFile::from(&self.trail),
            generated: self.generated(),
            perimeter: if self.generated() { self.trail.perimeter().ok() } else { None },
        }
    }

    fn begin(
        &mut self,
        patient_id: Option<String>,
        mode: Option<AssistMode>,
        target_loops: Option<u32>,
    ) -> Result<Vec<Event>, CommandError> {
        if self.run.is_some() {
            return Err(err(ErrorCode::State, "a run is already in progress"));
        }
        if !self.generated() {
            return Err(err(ErrorCode::State, "generate segments before begin"));
        }
        if self.idle.as_ref().is_some_and(Engine::is_pulling) {
            return Err(err(ErrorCode::State, "pull to start still in progress"));
        }
        if let Some(p) = &patient_id {
            check_name(p)?;
        }
        if let Some(mode) = mode {
            self.assist_on = mode == AssistMode::ContinuousAssist;
            if self.assist_on {
                self.assist.scale = 1.0;
            }
        }
        let session = SessionConfig {
            target_loops: target_loops.unwrap_or(self.config.session.target_loops),
            ..self.idle_config()
        };
        session
            .validate()
            .map_err(|e| err(ErrorCode::InvalidPayload, e.to_string()))?;
        let mut engine = Engine::new(self.trail.clone(), self.assist, session, self.pen)
            .map_err(|e| err(ErrorCode::State, e.to_string()))?;
        engine.set_assist_on(self.assist_on);

        let dir = self.config.sessions_dir();
        let mut n = self.runs + 1;
        while dir.join(format!("{}_{n:02}.jsonl", self.id)).exists() {
            n += 1;
        }
        let run_id = format!("{}_{n:02}", self.id);
        let patient_id = patient_id.unwrap_or_else(|| "anonymous".to_string());
        let cohort_label = self
            .registry
            .lock()
            .expect("registry lock")
            .get(&patient_id)
            .map(PatientProfile::cohort_label);
        let header = SessionHeader {
            format_version: FORMAT_VERSION,
            session_id: run_id.clone(),
            patient_id: patient_id.clone(),
            cohort_label,
            shape_name: self.trail.name.clone(),
            mode: session.mode,
            tick_hz: session.tick_hz,
            loop_capture_radius: session.loop_capture_radius,
            seed: None,
            started_at: (self.clock)(),
        };
        fs::create_dir_all(&dir).map_err(|e| err(ErrorCode::Persistence, format!("{}: {e}", dir.display())))?;
        let persist = |e: trailmaker::persistence::PersistenceError| err(ErrorCode::Persistence, e.to_string());
        let mut writer = SessionLogWriter::create(dir.join(format!("{run_id}.jsonl")), &header, &self.trail).map_err(persist)?;
        let first = engine.observe().map_err(|e| err(ErrorCode::State, e.to_string()))?;
        writer.record_tick(&first).map_err(persist)?;
        let mut metrics = StreamingMetrics::new();
        metrics.push(&first);

        self.runs = n;
        self.idle = None;
        self.phase = Phase::Running;
        self.run = Some(Run {
            id: run_id.clone(),
            tracker: Tracker::new(self.pen.position, self.config.tracker_gain, session.tick_period()),
            engine,
            writer,
            metrics,
        });
        Ok(vec![Event::SessionStarted {
            run_id,
            patient_id,
            mode: session.mode,
            target_loops: session.target_loops,
        }])
    }

    fn pull_to_start(&mut self) -> Result<Vec<Event>, CommandError> {
        if !self.generated() {
            return Err(err(ErrorCode::State, "no trail: add targets and generate segments first"));
        }
        let engine = match self.run.as_mut() {
            Some(run) => &mut run.engine,
            None => self.idle.as_mut().expect("generated trail has an idle engine"),
        };
        engine.pull_to_start().map_err(|e| err(ErrorCode::State, e.to_string()))?;
        Ok(vec![self.trail_update()])
    }

    /// Closes the run's log and returns the `session_ended` event, preceded by
    /// an error event if the log could not be completed.
    fn finish_run(&mut self, reason: EndReason) -> Vec<Event> {
        let Some(run) = self.run.take() else {
            return Vec::new();
        };
        let mut events = Vec::new();
        let footer = SessionFooter {
            loops_completed: run.engine.loops(),
            safety: run.engine.safety(),
            ended_at: (self.clock)(),
        };
        let log_path = run.writer.path().to_path_buf();
        if let Err(e) = run.writer.finish(&footer) {
            events.push(persistence_error(e.to_string()));
        }
        if let Err(e) = self.write_journal(&log_path.with_extension("commands.jsonl")) {
            events.push(persistence_error(e));
        }
        let perimeter = run.engine.trail().perimeter().ok();
        events.push(Event::SessionEnded {
            run_id: run.id,
            reason,
            log_file: log_path.display().to_string(),
            loops: run.engine.loops(),
            ticks: run.metrics.ticks(),
            average_deviation_mm: run.metrics.average_deviation(),
            speed_mm_s: perimeter.and_then(|p| run.metrics.speed(p)),
        });
        self.pen = *run.engine.pen();
        if reason == EndReason::Safety {
            self.phase = Phase::Halted;
        } else {
            self.phase = Phase::Editing;
            self.rebuild_idle();
        }
        events
    }

    fn write_journal(&self, path: &Path) -> Result<(), String> {
        let write = || -> std::io::Result<()> {
            let mut out = std::io::BufWriter::new(fs::File::create(path)?);
            for entry in &self.journal {
                serde_json::to_writer(&mut out, entry)?;
                out.write_all(b"\n")?;
            }
            out.flush()
        };
        write().map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Advances one tick and returns the events to broadcast: always a
    /// `state_update`, then `safety_shutdown` and `session_ended` when the run
    /// stops.
    pub fn advance(&mut self) -> Vec<Event> {
        self.tick += 1;
        let Some(run) = self.run.as_mut() else {
            if let Some(idle) = self.idle.as_mut().filter(|e| e.is_pulling()) {
                idle.advance(&mut Passive).expect("kinematic approach cannot fail");
                self.pen = *idle.pen();
            }
            return vec![Event::StateUpdate(self.state_update())];
        };
        let stepped = run.engine.advance(&mut run.tracker).and_then(|_| run.engine.observe());
        run.tracker.end_tick();
        let tick = match stepped {
            Ok(tick) => tick,
            Err(e) => {
                let mut events = vec![Event::Error {
                    request_id: None,
                    command: None,
                    code: ErrorCode::State,
                    message: format!("integration failed, run stopped: {e}"),
                }];
                events.extend(self.finish_run(EndReason::Safety));
                return events;
            }
        };
        self.pen = *run.engine.pen();
        let mut events = Vec::new();
        if let Err(e) = run.writer.record_tick(&tick) {
            events.push(persistence_error(e.to_string()));
        }
        run.metrics.push(&tick);
        let safety = run.engine.safety();
        let finished = run.engine.is_finished();
        let reached = run.engine.loops() >= run.engine.config().target_loops;
        events.insert(0, Event::StateUpdate(self.state_update()));
        if safety.tripped {
            events.push(Event::SafetyShutdown {
                cause: safety.cause,
                tick: self.tick,
                session_time: tick.t,
            });
            events.extend(self.finish_run(EndReason::Safety));
        } else if finished {
            let reason = if reached { EndReason::TargetLoops } else { EndReason::Timeout };
            events.extend(self.finish_run(reason));
        }
        events
    }

    pub fn state_update(&self) -> StateUpdate {
        let engine = self.run.as_ref().map(|r| &r.engine).or(self.idle.as_ref());
        let observed = engine.and_then(|e| e.observe().ok());
        let next = engine.and_then(|e| {
            let trail = e.trail();
            trail.nearest_point(self.pen.position.xy()).ok().map(|n| {
                let t = trail.next_target(&n);
                TargetRef {
                    id: t.id,
                    order_index: t.order_index,
                    x: t.position.x,
                    y: t.position.y,
                }
            })
        });
        StateUpdate {
            tick: self.tick,
            phase: self.phase,
            session_time: self.run.as_ref().map(|r| r.engine.time()),
            pen: self.pen.position,
            velocity: self.pen.velocity,
            force_breakdown: observed.as_ref().map(|o| o.force_breakdown),
            d_s: observed.as_ref().map(|o| o.d_s),
            nearest_segment_index: observed.as_ref().map(|o| o.nearest_segment),
            active_next_target: next,
            loops: self.run.as_ref().map_or(0, |r| r.engine.loops()),
            assist: AssistState {
                on: self.assist_on,
                scale: self.assist.scale,
            },
            out_of_plane: self.pen.position.z.abs() > self.config.out_of_plane_mm,
            pulling: engine.is_some_and(Engine::is_pulling),
        }
    }

    /// Ends any run on behalf of the server (shutdown or every client gone).
    /// The end is journaled so the command stream still replays.
    pub fn close(&mut self, reason: EndReason) -> Vec<Event> {
        let mut events = Vec::new();
        if self.run.is_some() {
            self.journal.push(JournalEntry {
                tick: self.tick,
                role: Role::Server,
                request_id: None,
                command: Command::EndSession,
            });
            events = self.finish_run(reason);
        }
        if reason == EndReason::ServerShutdown && self.phase != Phase::Halted {
            self.phase = Phase::Closed;
        }
        events
    }

    /// Rebuilds a channel from its journal: the same commands applied at the
    /// same ticks, then ticks until the last run ends.
    pub fn replay(
        id: impl Into<String>,
        config: Arc<ServiceConfig>,
        registry: SharedRegistry,
        journal: &[JournalEntry],
    ) -> LiveSession {
        let mut s = LiveSession::new(id, config, registry, no_clock);
        for e in journal {
            while s.tick < e.tick {
                s.advance();
            }
            s.apply(
                e.role,
                Request {
                    request_id: e.request_id,
                    command: e.command.clone(),
                },
            );
        }
        while s.run.is_some() {
            s.advance();
        }
        s
    }
}

fn persistence_error(message: String) -> Event {
    Event::Error {
        request_id: None,
        command: None,
        code: ErrorCode::Persistence,
        message,
    }
}

/// Reads a journal written next to a run's log.
pub fn read_journal(path: impl AsRef<Path>) -> std::io::Result<Vec<JournalEntry>> {
    let text = fs::read_to_string(path.as_ref())?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

/// Path of the journal written for the run logged at `log`.
pub fn journal_path(log: impl AsRef<Path>) -> PathBuf {
    log.as_ref().with_extension("commands.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;
    use trailmaker::persistence::load_session;
    use trailmaker::simulation::SafetyCause;

    fn session(dir: &Path) -> LiveSession {
        let config = ServiceConfig {
            data_dir: dir.to_path_buf(),
            ..ServiceConfig::default()
        };
        LiveSession::new("s", Arc::new(config), SharedRegistry::default(), no_clock)
    }

    fn send(s: &mut LiveSession, role: Role, command: Command) -> Vec<Output> {
        s.apply(
            role,
            Request {
                request_id: Some(1),
                command,
            },
        )
    }

    fn ok(out: &[Output]) {
        assert!(matches!(out[0], Output::Reply(Event::Ack { .. })), "{out:?}");
    }

    fn code(out: &[Output]) -> ErrorCode {
        match &out[0] {
            Output::Reply(Event::Error { code, .. }) => *code,
            other => panic!("{other:?}"),
        }
    }

    fn triangle(s: &mut LiveSession) {
        for (x, y) in [(-50.0, -30.0), (50.0, -30.0), (0.0, 50.0)] {
            ok(&send(s, Role::Therapist, Command::AddTarget { x, y }));
        }
        ok(&send(s, Role::Therapist, Command::SetLooping { looping: true }));
        ok(&send(s, Role::Therapist, Command::GenerateSegments));
    }

    #[test]
    fn generate_needs_two_targets() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        ok(&send(&mut s, Role::Therapist, Command::AddTarget { x: 0.0, y: 0.0 }));
        let out = send(&mut s, Role::Therapist, Command::GenerateSegments);
        assert_eq!(code(&out), ErrorCode::Geometry);
        match &out[0] {
            Output::Reply(Event::Error { message, .. }) => assert!(message.contains("at least two targets")),
            _ => unreachable!(),
        }
    }

    #[test]
    fn roles_and_phases_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        assert_eq!(code(&send(&mut s, Role::Therapist, Command::PenInput { x: 0.0, y: 0.0, z: 0.0 })), ErrorCode::Role);
        assert_eq!(code(&send(&mut s, Role::Patient, Command::AssistOn)), ErrorCode::Role);
        assert_eq!(code(&send(&mut s, Role::Observer, Command::ClearBoard)), ErrorCode::Role);
        assert_eq!(code(&send(&mut s, Role::Patient, Command::PenInput { x: 0.0, y: 0.0, z: 0.0 })), ErrorCode::State);
        assert_eq!(code(&send(&mut s, Role::Therapist, Command::EndSession)), ErrorCode::State);
        assert_eq!(
            code(&send(
                &mut s,
                Role::Therapist,
                Command::Begin {
                    patient_id: None,
                    mode: None,
                    target_loops: None
                }
            )),
            ErrorCode::State
        );
        assert_eq!(code(&send(&mut s, Role::Therapist, Command::SetAssistScale { scale: 1.5 })), ErrorCode::InvalidPayload);
        assert_eq!(code(&send(&mut s, Role::Therapist, Command::LoadTrail { name: "../x".into() })), ErrorCode::InvalidPayload);
        assert_eq!(code(&send(&mut s, Role::Therapist, Command::LoadTrail { name: "nope".into() })), ErrorCode::NotFound);
        assert_eq!(s.journal().len(), 9);
    }

    #[test]
    fn save_and_load_trails() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        triangle(&mut s);
        ok(&send(&mut s, Role::Therapist, Command::SaveTrail { name: "tri".into() }));
        ok(&send(&mut s, Role::Therapist, Command::ClearBoard));
        assert!(s.trail().targets().is_empty());
        ok(&send(&mut s, Role::Therapist, Command::LoadTrail { name: "tri".into() }));
        assert_eq!(s.trail().targets().len(), 3);
        assert!(s.generated());
        ok(&send(&mut s, Role::Therapist, Command::LoadTrail { name: "letter_B".into() }));
        assert_eq!(s.trail().targets().len(), 14);
    }

    #[test]
    fn pull_to_start_arrives_and_repeats_as_noop() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        triangle(&mut s);
        let out = send(&mut s, Role::Therapist, Command::PullToStart);
        ok(&out);
        assert!(matches!(out[1], Output::Broadcast(Event::TrailUpdate { .. })));
        let mut ticks = 0;
        while s.state_update().pulling {
            s.advance();
            assert!(s.pen().speed() < trailmaker::simulation::SPEED_LIMIT);
            ticks += 1;
        }
        assert!(ticks <= 60, "{ticks} ticks");
        let goal = s.trail().targets()[0].position;
        assert!((s.pen().position.xy() - goal).norm() < 0.5);
        ok(&send(&mut s, Role::Therapist, Command::PullToStart));
        assert!(!s.state_update().pulling);
    }

    #[test]
    fn scale_change_shows_on_the_next_tick_and_run_is_logged() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        triangle(&mut s);
        ok(&send(&mut s, Role::Therapist, Command::PullToStart));
        while s.state_update().pulling {
            s.advance();
        }
        let begin = Command::Begin {
            patient_id: Some("p1".into()),
            mode: Some(AssistMode::ContinuousAssist),
            target_loops: Some(1),
        };
        ok(&send(&mut s, Role::Therapist, begin));
        for _ in 0..10 {
            s.advance();
        }
        ok(&send(&mut s, Role::Therapist, Command::SetAssistScale { scale: 0.5 }));
        let events = s.advance();
        match &events[0] {
            Event::StateUpdate(u) => assert_eq!(u.assist, AssistState { on: true, scale: 0.5 }),
            other => panic!("{other:?}"),
        }
        ok(&send(&mut s, Role::Therapist, Command::EndSession));
        assert_eq!(s.phase(), Phase::Editing);
        let r = load_session(dir.path().join("sessions/s_01.jsonl")).unwrap();
        assert_eq!(r.ticks.len(), 12);
        assert_eq!(r.ticks[11].assist_scale, 0.5);
        assert_eq!(r.ticks[10].assist_scale, 1.0);
        let journal = read_journal(journal_path(dir.path().join("sessions/s_01.jsonl"))).unwrap();
        assert_eq!(journal.len(), s.journal().len());
    }

    #[test]
    fn out_of_plane_input_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        triangle(&mut s);
        ok(&send(&mut s, Role::Therapist, Command::PullToStart));
        while s.state_update().pulling {
            s.advance();
        }
        ok(&send(
            &mut s,
            Role::Therapist,
            Command::Begin {
                patient_id: None,
                mode: None,
                target_loops: None,
            },
        ));
        let start = s.trail().targets()[0].position;
        let mut last = None;
        // Lift the cursor 0.1 mm per tick to 3 mm, then hold.
        for i in 1..=60 {
            let z = (0.1 * f64::from(i)).min(3.0);
            ok(&send(&mut s, Role::Patient, Command::PenInput { x: start.x, y: start.y, z }));
            if let Event::StateUpdate(u) = &s.advance()[0] {
                last = Some(u.clone());
            }
        }
        assert!(s.is_running());
        let u = last.unwrap();
        assert!(u.pen.z > 2.0, "{}", u.pen.z);
        assert!(u.out_of_plane);
        assert!(u.force_breakdown.unwrap().plane.z < 0.0);
    }

    #[test]
    fn overspeed_input_halts_the_session() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        triangle(&mut s);
        ok(&send(
            &mut s,
            Role::Therapist,
            Command::Begin {
                patient_id: None,
                mode: None,
                target_loops: None,
            },
        ));
        ok(&send(&mut s, Role::Patient, Command::PenInput { x: 150.0, y: 0.0, z: 0.0 }));
        let events = s.advance();
        let kinds: Vec<_> = events.iter().map(Event::kind).collect();
        assert_eq!(kinds, ["state_update", "safety_shutdown", "session_ended"]);
        assert!(matches!(
            events[1],
            Event::SafetyShutdown {
                cause: SafetyCause::Overspeed,
                ..
            }
        ));
        assert_eq!(s.phase(), Phase::Halted);
        assert_eq!(code(&send(&mut s, Role::Therapist, Command::AssistOn)), ErrorCode::Shutdown);
        let r = load_session(dir.path().join("sessions/s_01.jsonl")).unwrap();
        assert!(r.safety().tripped);
        assert!(r.is_closed());
    }
}
