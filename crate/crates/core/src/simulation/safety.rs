//! Velocity and force saturation monitor.

use serde::{Deserialize, Serialize};

use super::plant::PenState;
use crate::forcefield::ForceBreakdown;

/// Stylus speed above which the device shuts down (mm/s).
pub const SPEED_LIMIT: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SafetyCause {
    #[default]
    None,
    Overspeed,
    Overforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SafetyState {
    pub tripped: bool,
    pub cause: SafetyCause,
    /// Session time of the trip (s).
    pub trip_time: Option<f64>,
}

impl SafetyState {
    pub fn tripped(cause: SafetyCause, at: f64) -> Self {
        SafetyState {
            tripped: true,
            cause,
            trip_time: Some(at),
        }
    }
}

/// Instantaneous check. Speed exactly at the limit is allowed.
pub fn safety_check(pen: &PenState, field: &ForceBreakdown, device_cap: f64, t: f64) -> SafetyState {
    if pen.speed() > SPEED_LIMIT {
        SafetyState::tripped(SafetyCause::Overspeed, t)
    } else if field.total.norm() > device_cap {
        SafetyState::tripped(SafetyCause::Overforce, t)
    } else {
        SafetyState::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn moving(speed: f64) -> PenState {
        PenState {
            velocity: Vector3::new(speed, 0.0, 0.0),
            ..PenState::default()
        }
    }

    #[test]
    fn speed_threshold() {
        let f = ForceBreakdown::zero();
        let s = safety_check(&moving(450.0), &f, 3.3, 1.0);
        assert!(s.tripped);
        assert_eq!(s.cause, SafetyCause::Overspeed);
        assert!(!safety_check(&moving(150.0), &f, 3.3, 1.0).tripped);
        assert!(!safety_check(&moving(400.0), &f, 3.3, 1.0).tripped);
    }

    #[test]
    fn force_threshold() {
        let f = ForceBreakdown {
            total: Vector3::new(0.0, 0.0, 3.4),
            ..ForceBreakdown::zero()
        };
        let s = safety_check(&moving(10.0), &f, 3.3, 2.0);
        assert_eq!(s.cause, SafetyCause::Overforce);
        assert_eq!(s.trip_time, Some(2.0));
    }
}
