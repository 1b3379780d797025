//! Live trailmaker sessions: the wire protocol, the per-channel state
//! machine, and a WebSocket server that ticks every channel at the session
//! rate.

pub mod config;
pub mod hub;
pub mod live;
pub mod protocol;
pub mod server;

pub use config::ServiceConfig;
pub use hub::{Connection, Hub};
pub use live::{read_journal, journal_path, JournalEntry, LiveSession, Output, SharedRegistry};
pub use protocol::{Command, Envelope, ErrorCode, Event, Request, Role, StateUpdate, PROTOCOL_VERSION};
pub use server::Server;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("server is shutting down")]
    ShuttingDown,
    #[error(transparent)]
    Persistence(#[from] trailmaker::persistence::PersistenceError),
}
