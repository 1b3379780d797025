//! Kinematic approach used to bring the pen to the first target.

use nalgebra::{Point3, Vector3};

use super::safety::SPEED_LIMIT;

/// Peak speed allowed during the approach, below the safety limit.
pub const APPROACH_PEAK_SPEED: f64 = 0.9 * SPEED_LIMIT;
/// Fastest convergence rate used for short approaches (1/s).
pub const APPROACH_MAX_RATE: f64 = 8.0;
/// The approach finishes once the remaining error drops below this (mm).
pub const ARRIVAL_TOLERANCE: f64 = 0.4;

/// Critically damped approach `goal + d (1 + w t) exp(-w t)` whose peak speed
/// `|d| w / e` stays under [`APPROACH_PEAK_SPEED`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproachProfile {
    start: Point3<f64>,
    goal: Point3<f64>,
    rate: f64,
    duration: f64,
}

impl ApproachProfile {
    pub fn new(start: Point3<f64>, goal: Point3<f64>) -> Self {
        let distance = (goal - start).norm();
        if distance <= ARRIVAL_TOLERANCE {
            return ApproachProfile {
                start,
                goal,
                rate: APPROACH_MAX_RATE,
                duration: 0.0,
            };
        }
        let rate = APPROACH_MAX_RATE.min(APPROACH_PEAK_SPEED * std::f64::consts::E / distance);
        // Solve (1 + x) e^-x = tol / distance for x = w t by Newton's method;
        // the left side is decreasing for x > 0.
        let target = ARRIVAL_TOLERANCE / distance;
        let mut x = 1.0_f64;
        for _ in 0..100 {
            let f = (1.0 + x) * (-x).exp() - target;
            let df = -x * (-x).exp();
            let next = (x - f / df).max(x / 2.0);
            if (next - x).abs() < 1e-12 {
                x = next;
                break;
            }
            x = next;
        }
        ApproachProfile {
            start,
            goal,
            rate,
            duration: x / rate,
        }
    }

    /// Time until arrival (s).
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn goal(&self) -> Point3<f64> {
        self.goal
    }

    pub fn is_noop(&self) -> bool {
        self.duration == 0.0
    }

    /// Position and velocity at time `t`; at and after arrival the pen sits on
    /// the goal at rest.
    pub fn state_at(&self, t: f64) -> (Point3<f64>, Vector3<f64>) {
        if t >= self.duration {
            return (self.goal, Vector3::zeros());
        }
        let d = self.start - self.goal;
        let w = self.rate;
        let decay = (-w * t).exp();
        let position = self.goal + d * ((1.0 + w * t) * decay);
        let velocity = d * (-w * w * t * decay);
        (position, velocity)
    }

    pub fn peak_speed(&self) -> f64 {
        let t = (1.0 / self.rate).min(self.duration);
        self.state_at(t).1.norm()
    }
}
