//! On-disk formats: trail JSON, session JSON Lines logs, the patient registry
//! and the learning dataset CSV. Every format carries `format_version`.

mod dataset;
mod registry;
mod session_log;
mod trail_file;

use std::path::PathBuf;

use thiserror::Error;

pub use dataset::{
    balanced_subset, export_dataset, read_dataset_csv, write_dataset_csv, ExportOptions, ExportOutcome, SkippedRecord,
    TrajectorySeries,
};
pub use registry::{FmEntry, PatientProfile, PatientRegistry, FM_MAX};
pub use session_log::{
    load_session, replay, ReplayReport, SessionFooter, SessionHeader, SessionLogWriter, SessionRecord, Tick,
    TrailSnapshot,
};
pub use trail_file::{load_trail, save_trail, TargetEntry, TrailFile};

use crate::geometry::GeometryError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: parse error at line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("tick at t={got} does not follow t={previous}")]
    OutOfOrderTick { previous: f64, got: f64 },
    #[error("FM score {0} outside 0..={FM_MAX}")]
    ScoreOutOfRange(i64),
    #[error("FM date {got} precedes the last recorded date {last}")]
    DateOrder { last: chrono::NaiveDate, got: chrono::NaiveDate },
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("no eligible records to export")]
    EmptyExport,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl PersistenceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PersistenceError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, err: &serde_json::Error) -> Self {
        PersistenceError::Parse {
            context: context.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

pub(crate) fn check_version(found: u32) -> Result<(), PersistenceError> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(PersistenceError::UnsupportedVersion {
            found,
            supported: FORMAT_VERSION,
        })
    }
}
