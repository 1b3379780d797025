//! Service configuration: a JSON file, then environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trailmaker::forcefield::AssistConfig;
use trailmaker::simulation::SessionConfig;

use crate::ServiceError;

pub const ENV_BIND: &str = "TRAILMAKER_BIND";
pub const ENV_PORT: &str = "TRAILMAKER_PORT";
pub const ENV_DATA_DIR: &str = "TRAILMAKER_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Root for `sessions/`, `trails/` and `patients.json`.
    pub data_dir: PathBuf,
    /// Defaults for every run; `mode` is decided per run.
    pub session: SessionConfig,
    pub assist: AssistConfig,
    /// Stiffness pulling the pen toward the latest pen input (N/mm).
    pub tracker_gain: f64,
    /// |z| above which the pen is reported out of plane (mm).
    pub out_of_plane_mm: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            session: SessionConfig::default(),
            assist: AssistConfig::default(),
            tracker_gain: 4.0,
            out_of_plane_mm: 1.0,
        }
    }
}

impl ServiceConfig {
    /// Reads `path` (or starts from the defaults) and applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?
            }
            None => ServiceConfig::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    /// `TRAILMAKER_BIND` replaces the address, then `TRAILMAKER_PORT` the
    /// port; `TRAILMAKER_DATA_DIR` replaces the data directory.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(bind) = var(ENV_BIND) {
            self.bind = bind
                .parse()
                .map_err(|e| ServiceError::Config(format!("{ENV_BIND}=`{bind}`: {e}")))?;
        }
        if let Some(port) = var(ENV_PORT) {
            let port = port
                .parse()
                .map_err(|e| ServiceError::Config(format!("{ENV_PORT}=`{port}`: {e}")))?;
            self.bind.set_port(port);
        }
        if let Some(dir) = var(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.session.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        self.assist.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        if !(self.tracker_gain.is_finite() && self.tracker_gain > 0.0) {
            return Err(ServiceError::Config(format!("tracker_gain must be positive, got {}", self.tracker_gain)));
        }
        if !(self.out_of_plane_mm.is_finite() && self.out_of_plane_mm >= 0.0) {
            return Err(ServiceError::Config(format!(
                "out_of_plane_mm must be >= 0, got {}",
                self.out_of_plane_mm
            )));
        }
        Ok(())
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.data_dir.join("sessions")
    }

    pub fn trails_dir(&self) -> PathBuf {
        self.data_dir.join("trails")
    }

    pub fn registry_path(&self) -> PathBuf {
        self.data_dir.join("patients.json")
    }
}
