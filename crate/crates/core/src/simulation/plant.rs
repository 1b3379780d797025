//! Damped point-mass model of the stylus.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::SimulationError;
use crate::forcefield::ForceBreakdown;

/// Positions are in millimeters and forces in newtons, so an acceleration of
/// `F / m` m/s^2 is `1000 F / m` mm/s^2.
const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenState {
    /// mm
    pub position: Point3<f64>,
    /// mm/s
    pub velocity: Vector3<f64>,
    /// kg
    pub mass: f64,
    /// N·s/mm
    pub damping: f64,
}

impl Default for PenState {
    fn default() -> Self {
        PenState::at_rest(Point3::origin())
    }
}

impl PenState {
    pub const DEFAULT_MASS: f64 = 0.1;
    pub const DEFAULT_DAMPING: f64 = 0.02;

    pub fn at_rest(position: Point3<f64>) -> Self {
        PenState {
            position,
            velocity: Vector3::zeros(),
            mass: Self::DEFAULT_MASS,
            damping: Self::DEFAULT_DAMPING,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Kinetic energy in joules.
    pub fn kinetic_energy(&self) -> f64 {
        let v = self.velocity / MM_PER_M;
        0.5 * self.mass * v.norm_squared()
    }

    fn is_valid(&self) -> bool {
        self.mass > 0.0
            && self.mass.is_finite()
            && self.damping >= 0.0
            && self.damping.is_finite()
            && self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
    }
}

/// One semi-implicit Euler step under an external force (the human, plus any
/// load such as the stylus weight) and the field force.
pub fn step(
    pen: &PenState,
    external: &Vector3<f64>,
    field: &ForceBreakdown,
    dt: f64,
) -> Result<PenState, SimulationError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimulationError::Integration(format!("time step must be positive, got {dt}")));
    }
    if !pen.is_valid() {
        return Err(SimulationError::Integration("pen state is not finite or has invalid mass/damping".into()));
    }
    if !external.iter().chain(field.total.iter()).all(|v| v.is_finite()) {
        return Err(SimulationError::Integration("non-finite force".into()));
    }
    let force = external + field.total - pen.velocity * pen.damping;
    let velocity = pen.velocity + force * (dt * MM_PER_M / pen.mass);
    let position = pen.position + velocity * dt;
    Ok(PenState {
        position,
        velocity,
        ..*pen
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn field(total: Vector3<f64>) -> ForceBreakdown {
        ForceBreakdown {
            total,
            ..ForceBreakdown::zero()
        }
    }

    #[test]
    fn at_rest_stays_put() {
        let pen = PenState::at_rest(Point3::new(1.0, 2.0, 0.0));
        let next = step(&pen, &Vector3::zeros(), &ForceBreakdown::zero(), 1e-3).unwrap();
        assert_eq!(next, pen);
    }

    #[test]
    fn constant_force_without_damping_is_linear() {
        let mut pen = PenState {
            damping: 0.0,
            ..PenState::default()
        };
        let f = Vector3::new(0.5, 0.0, 0.0);
        let dt = 1.0 / 300.0;
        for _ in 0..300 {
            pen = step(&pen, &f, &ForceBreakdown::zero(), dt).unwrap();
        }
        // v = F/m t = 0.5 / 0.1 m/s^2 * 1 s = 5000 mm/s
        assert_relative_eq!(pen.velocity.x, 5000.0, epsilon = 1e-6);
    }

    #[test]
    fn damped_terminal_speed() {
        let mut pen = PenState::default();
        let f = Vector3::new(0.0, 0.6, 0.0);
        // Time constant m / (1000 c) = 5 ms; run for ten of them.
        let tau = pen.mass / (MM_PER_M * pen.damping);
        let dt = tau / 50.0;
        for _ in 0..500 {
            pen = step(&pen, &Vector3::zeros(), &field(f), dt).unwrap();
        }
        let terminal = 0.6 / pen.damping;
        assert!((pen.velocity.y - terminal).abs() < 0.01 * terminal);
    }

    #[test]
    fn rejects_bad_inputs() {
        let pen = PenState::default();
        assert!(step(&pen, &Vector3::zeros(), &ForceBreakdown::zero(), 0.0).is_err());
        assert!(step(&pen, &Vector3::new(f64::NAN, 0.0, 0.0), &ForceBreakdown::zero(), 0.01).is_err());
        let heavy = PenState { mass: 0.0, ..pen };
        assert!(step(&heavy, &Vector3::zeros(), &ForceBreakdown::zero(), 0.01).is_err());
    }

    #[test]
    fn kinetic_energy_decays_without_forces() {
        let mut pen = PenState {
            velocity: Vector3::new(120.0, -40.0, 5.0),
            ..PenState::default()
        };
        let mut last = pen.kinetic_energy();
        for _ in 0..200 {
            pen = step(&pen, &Vector3::zeros(), &ForceBreakdown::zero(), 1.0 / 300.0).unwrap();
            let e = pen.kinetic_energy();
            assert!(e <= last);
            last = e;
        }
    }
}
