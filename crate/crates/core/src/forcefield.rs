//! Assistive force fields acting on the stylus.
//!
//! Three components are evaluated independently and then composed:
//!
//! * plane retention, a spring along z pulling the pen back into the trail
//!   plane, always active;
//! * path leading, a deviation-proportional pull blending the direction to the
//!   nearest candidate point with the direction to the next target, active
//!   only while assistance is on;
//! * gravity compensation, cancelling the component of the stylus weight along
//!   the active segment, always active.
//!
//! The planar part (lead + gravity compensation) is capped at the patient's
//! admissible force and the total at the device limit.

use nalgebra::{Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, NearestPoint, Trail};

/// Below this norm a direction is treated as undefined.
const DIRECTION_EPS: f64 = 1e-12;
/// Caps are applied with this relative margin so rounding never lands a
/// capped vector a hair above its limit.
const CAP_MARGIN: f64 = 1.0 - 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForceError {
    #[error("invalid assist configuration: {0}")]
    InvalidConfig(String),
    #[error("segment direction has zero length")]
    ZeroDirection,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssistConfig {
    /// Therapist slider, 0..=1. Scale 1 is continuous assistance.
    pub scale: f64,
    /// Path-leading spring constant (N/mm).
    pub k_lead: f64,
    /// Plane-retention spring constant (N/mm).
    pub k_plane: f64,
    /// Largest planar assist force the patient should feel (N).
    pub admissible_cap: f64,
    /// Largest force the device can render (N).
    pub device_cap: f64,
    /// Stylus weight to be compensated along the segment (N).
    pub effective_weight: f64,
}

impl Default for AssistConfig {
    fn default() -> Self {
        AssistConfig {
            scale: 1.0,
            k_lead: 0.2,
            k_plane: 0.5,
            admissible_cap: 2.0,
            device_cap: 3.3,
            effective_weight: 0.30,
        }
    }
}

impl AssistConfig {
    pub fn validate(&self) -> Result<(), ForceError> {
        let gains = [
            ("scale", self.scale),
            ("k_lead", self.k_lead),
            ("k_plane", self.k_plane),
            ("admissible_cap", self.admissible_cap),
            ("device_cap", self.device_cap),
            ("effective_weight", self.effective_weight),
        ];
        for (name, v) in gains {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ForceError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.scale > 1.0 {
            return Err(ForceError::InvalidConfig(format!("scale must be in [0, 1], got {}", self.scale)));
        }
        if self.admissible_cap > self.device_cap {
            return Err(ForceError::InvalidConfig(format!(
                "admissible cap {} exceeds device cap {}",
                self.admissible_cap, self.device_cap
            )));
        }
        Ok(())
    }
}

/// Every force acting on the stylus from the field, after caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceBreakdown {
    pub plane: Vector3<f64>,
    pub lead: Vector3<f64>,
    pub gravity_comp: Vector3<f64>,
    pub total: Vector3<f64>,
    pub assist_active: bool,
}

impl ForceBreakdown {
    pub fn zero() -> Self {
        ForceBreakdown {
            plane: Vector3::zeros(),
            lead: Vector3::zeros(),
            gravity_comp: Vector3::zeros(),
            total: Vector3::zeros(),
            assist_active: false,
        }
    }

    pub fn planar(&self) -> Vector3<f64> {
        self.lead + self.gravity_comp
    }
}

pub fn plane_retaining(pen: &Point3<f64>, config: &AssistConfig) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -config.k_plane * pen.z)
}

fn unit_or_zero(v: Vector2<f64>) -> Vector2<f64> {
    v.try_normalize(DIRECTION_EPS).unwrap_or_else(Vector2::zeros)
}

/// Path-leading force for a pen whose nearest candidate is already known.
pub fn path_leading_from(
    pen: Point2<f64>,
    trail: &Trail,
    nearest: &NearestPoint,
    config: &AssistConfig,
    assist_on: bool,
) -> Vector2<f64> {
    if !assist_on || nearest.distance <= 0.0 {
        return Vector2::zeros();
    }
    let to_nearest = unit_or_zero(nearest.point - pen);
    let to_next = unit_or_zero(trail.next_target(nearest).position - pen);
    let Some(direction) = (to_nearest + to_next).try_normalize(DIRECTION_EPS) else {
        // Anti-parallel pulls cancel; refuse to pick an arbitrary side.
        return Vector2::zeros();
    };
    let magnitude = (config.scale * config.k_lead * nearest.distance).min(config.admissible_cap);
    direction * magnitude
}

pub fn path_leading(
    pen: Point2<f64>,
    trail: &Trail,
    config: &AssistConfig,
    assist_on: bool,
) -> Result<Vector2<f64>, ForceError> {
    let nearest = trail.nearest_point(pen)?;
    Ok(path_leading_from(pen, trail, &nearest, config, assist_on))
}

/// Force cancelling the projection of the stylus weight (acting along -y)
/// onto the segment direction.
pub fn gravity_compensation(direction: Vector2<f64>, config: &AssistConfig) -> Result<Vector2<f64>, ForceError> {
    let u = direction
        .try_normalize(DIRECTION_EPS)
        .ok_or(ForceError::ZeroDirection)?;
    Ok(u * (config.effective_weight * u.y))
}

/// Evaluates and caps all components. Also returns the nearest point, which
/// callers need for the deviation metric.
pub fn compose_with_nearest(
    pen: &Point3<f64>,
    trail: &Trail,
    config: &AssistConfig,
    assist_on: bool,
) -> Result<(ForceBreakdown, NearestPoint), ForceError> {
    let pen_xy = pen.xy();
    let nearest = trail.nearest_point(pen_xy)?;

    let mut plane = plane_retaining(pen, config);
    plane.z = plane.z.clamp(-config.device_cap, config.device_cap);

    let lead = path_leading_from(pen_xy, trail, &nearest, config, assist_on);
    let gravity = match trail.active_segment(&nearest).direction() {
        Some(u) => gravity_compensation(u, config)?,
        None => Vector2::zeros(),
    };

    // One factor for the whole planar part keeps lead + gravity = planar.
    let planar = lead + gravity;
    let norm = planar.norm();
    let room = (config.device_cap.powi(2) - plane.z.powi(2)).max(0.0).sqrt();
    let limit = config.admissible_cap.min(room);
    let factor = if norm > limit { limit / norm * CAP_MARGIN } else { 1.0 };

    let lead = Vector3::new(lead.x * factor, lead.y * factor, 0.0);
    let gravity_comp = Vector3::new(gravity.x * factor, gravity.y * factor, 0.0);
    let breakdown = ForceBreakdown {
        plane,
        lead,
        gravity_comp,
        total: plane + lead + gravity_comp,
        assist_active: assist_on,
    };
    Ok((breakdown, nearest))
}

pub fn compose(
    pen: &Point3<f64>,
    trail: &Trail,
    config: &AssistConfig,
    assist_on: bool,
) -> Result<ForceBreakdown, ForceError> {
    compose_with_nearest(pen, trail, config, assist_on).map(|(b, _)| b)
}
