//! Wire protocol: JSON text messages, one per WebSocket frame.
//!
//! Every message is an object with a `type` tag. Clients send commands and
//! may attach a `request_id`, which the server echoes in the `ack` or `error`
//! answering that command. Every server message carries `format_version`.
//!
//! ```json
//! {"type": "add_target", "request_id": 1, "x": -40.0, "y": 0.0}
//! {"format_version": 1, "type": "ack", "request_id": 1, "command": "add_target"}
//! {"type": "pen_input", "x": -38.5, "y": 1.2, "z": 0.0}
//! {"format_version": 1, "type": "error", "request_id": 7, "command": "pen_input",
//!  "code": "role", "message": "pen_input requires the patient role"}
//! ```

use chrono::NaiveDate;
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use trailmaker::forcefield::ForceBreakdown;
use trailmaker::persistence::{TrailFile, FORMAT_VERSION};
use trailmaker::simulation::{AssistMode, SafetyCause, SubjectKind};

/// Version of the message schemas below.
pub const PROTOCOL_VERSION: u32 = FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Therapist,
    Patient,
    Observer,
    /// Commands issued by the server itself (shutdown, abandoned sessions).
    /// Never accepted from a connection.
    Server,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Therapist => "therapist",
            Role::Patient => "patient",
            Role::Observer => "observer",
            Role::Server => "server",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "therapist" => Ok(Role::Therapist),
            "patient" => Ok(Role::Patient),
            "observer" => Ok(Role::Observer),
            _ => Err(format!("unknown role `{s}` (expected therapist, patient or observer)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    AddTarget {
        x: f64,
        y: f64,
    },
    MoveTarget {
        target_id: u32,
        x: f64,
        y: f64,
    },
    GenerateSegments,
    SetLooping {
        looping: bool,
    },
    SaveTrail {
        name: String,
    },
    /// Loads a saved trail, or one of the reference shapes at its default
    /// size when no saved trail has that name.
    LoadTrail {
        name: String,
    },
    Begin {
        #[serde(default)]
        patient_id: Option<String>,
        /// Overrides the current assistance state: continuous assistance
        /// switches assistance on at scale 1.
        #[serde(default)]
        mode: Option<AssistMode>,
        #[serde(default)]
        target_loops: Option<u32>,
    },
    PullToStart,
    SetAssistScale {
        scale: f64,
    },
    AssistOn,
    AssistOff,
    PenInput {
        x: f64,
        y: f64,
        #[serde(default)]
        z: f64,
    },
    EndSession,
    RegisterPatient {
        patient_id: String,
        cohort_label: SubjectKind,
    },
    UpdateFmScore {
        patient_id: String,
        date: NaiveDate,
        score: i64,
    },
    ClearBoard,
}

pub const COMMAND_TYPES: [&str; 16] = [
    "add_target",
    "move_target",
    "generate_segments",
    "set_looping",
    "save_trail",
    "load_trail",
    "begin",
    "pull_to_start",
    "set_assist_scale",
    "assist_on",
    "assist_off",
    "pen_input",
    "end_session",
    "register_patient",
    "update_fm_score",
    "clear_board",
];

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::AddTarget { .. } => "add_target",
            Command::MoveTarget { .. } => "move_target",
            Command::GenerateSegments => "generate_segments",
            Command::SetLooping { .. } => "set_looping",
            Command::SaveTrail { .. } => "save_trail",
            Command::LoadTrail { .. } => "load_trail",
            Command::Begin { .. } => "begin",
            Command::PullToStart => "pull_to_start",
            Command::SetAssistScale { .. } => "set_assist_scale",
            Command::AssistOn => "assist_on",
            Command::AssistOff => "assist_off",
            Command::PenInput { .. } => "pen_input",
            Command::EndSession => "end_session",
            Command::RegisterPatient { .. } => "register_patient",
            Command::UpdateFmScore { .. } => "update_fm_score",
            Command::ClearBoard => "clear_board",
        }
    }

    /// The only role allowed to send this command.
    pub fn required_role(&self) -> Role {
        match self {
            Command::PenInput { .. } => Role::Patient,
            _ => Role::Therapist,
        }
    }
}

/// A parsed client message.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub request_id: Option<u64>,
    pub command: Command,
}

impl Request {
    /// Parses one client message. On failure returns the error event to send
    /// back, with whatever request id and type could be recovered.
    #[allow(clippy::result_large_err)]
    pub fn parse(text: &str) -> Result<Request, Event> {
        let fail = |request_id, command: Option<String>, code, message: String| Event::Error {
            request_id,
            command,
            code,
            message,
        };
        let mut value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| fail(None, None, ErrorCode::Parse, format!("malformed JSON: {e}")))?;
        let Some(obj) = value.as_object_mut() else {
            return Err(fail(None, None, ErrorCode::Parse, "message must be a JSON object".into()));
        };
        let request_id = match obj.remove("request_id") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| fail(None, None, ErrorCode::Parse, "request_id must be a non-negative integer".into()))?,
            ),
        };
        let kind = match obj.get("type") {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => return Err(fail(request_id, None, ErrorCode::Parse, "missing string field `type`".into())),
        };
        if !COMMAND_TYPES.contains(&kind.as_str()) {
            return Err(fail(
                request_id,
                Some(kind.clone()),
                ErrorCode::UnknownType,
                format!("unknown message type `{kind}`"),
            ));
        }
        let keys: Vec<String> = obj.keys().cloned().collect();
        let command: Command = serde_json::from_value(value)
            .map_err(|e| fail(request_id, Some(kind.clone()), ErrorCode::InvalidPayload, e.to_string()))?;
        // Unit variants ignore extra fields under serde's internal tagging.
        let known = serde_json::to_value(&command).expect("commands serialize");
        if let Some(extra) = keys.iter().find(|k| known.get(k.as_str()).is_none()) {
            return Err(fail(request_id, Some(kind), ErrorCode::InvalidPayload, format!("unknown field `{extra}`")));
        }
        Ok(Request { request_id, command })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Parse,
    UnknownType,
    InvalidPayload,
    Role,
    /// The command does not apply in the session's current phase.
    State,
    /// The session was halted by a safety shutdown.
    Shutdown,
    Geometry,
    NotFound,
    Persistence,
    Registry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Trail editing; the pen moves only during pull to start.
    Editing,
    /// Between `begin` and the end of the run; ticks are recorded.
    Running,
    /// Halted by the safety monitor. Every further command is refused.
    Halted,
    /// The server is shutting down.
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Requested,
    TargetLoops,
    Timeout,
    Safety,
    Disconnected,
    ServerShutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssistState {
    pub on: bool,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRef {
    pub id: u32,
    pub order_index: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    /// Channel tick counter; increases by one every tick, recorded or not.
    pub tick: u64,
    pub phase: Phase,
    /// Time within the current run (s), when one is active.
    pub session_time: Option<f64>,
    pub pen: Point3<f64>,
    pub velocity: Vector3<f64>,
    /// Absent until the trail has segments.
    pub force_breakdown: Option<ForceBreakdown>,
    pub d_s: Option<f64>,
    pub nearest_segment_index: Option<usize>,
    pub active_next_target: Option<TargetRef>,
    pub loops: u32,
    pub assist: AssistState,
    pub out_of_plane: bool,
    pub pulling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Welcome {
        session_id: String,
        connection_id: u64,
        role: Role,
        phase: Phase,
    },
    Ack {
        request_id: Option<u64>,
        command: String,
    },
    Error {
        request_id: Option<u64>,
        command: Option<String>,
        code: ErrorCode,
        message: String,
    },
    StateUpdate(StateUpdate),
    TrailUpdate {
        trail: TrailFile,
        generated: bool,
        perimeter: Option<f64>,
    },
    SessionStarted {
        /// Id of the recorded run, also the log file stem.
        run_id: String,
        patient_id: String,
        mode: AssistMode,
        target_loops: u32,
    },
    SessionEnded {
        run_id: String,
        reason: EndReason,
        log_file: String,
        loops: u32,
        ticks: u64,
        average_deviation_mm: Option<f64>,
        speed_mm_s: Option<f64>,
    },
    SafetyShutdown {
        cause: SafetyCause,
        tick: u64,
        session_time: f64,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Welcome { .. } => "welcome",
            Event::Ack { .. } => "ack",
            Event::Error { .. } => "error",
            Event::StateUpdate(_) => "state_update",
            Event::TrailUpdate { .. } => "trail_update",
            Event::SessionStarted { .. } => "session_started",
            Event::SessionEnded { .. } => "session_ended",
            Event::SafetyShutdown { .. } => "safety_shutdown",
        }
    }
}

/// A server message as sent on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub format_version: u32,
    #[serde(flatten)]
    pub event: Event,
}

impl Envelope {
    pub fn to_text(event: &Event) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            format_version: u32,
            #[serde(flatten)]
            event: &'a Event,
        }
        serde_json::to_string(&Out {
            format_version: PROTOCOL_VERSION,
            event,
        })
        .expect("events serialize")
    }

    pub fn parse(text: &str) -> Result<Envelope, serde_json::Error> {
        serde_json::from_str(text)
    }
}
