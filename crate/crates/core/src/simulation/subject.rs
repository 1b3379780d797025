//! Synthetic human: a spring pursuit of a point slightly ahead on the trail,
//! perturbed by tremor, noise and occasional jerks.

use std::f64::consts::TAU;

use nalgebra::{Point2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::plant::PenState;
use super::{IntentSource, SimulationError};
use crate::geometry::{Trail, TrailPath};

/// Length of a jerk spike (s).
pub const SPIKE_DURATION: f64 = 0.1;
/// Jerk spike amplitude relative to `noise_sigma`.
pub const SPIKE_GAIN: f64 = 5.0;

// Search window for tracking progress along the trail (mm behind / ahead of
// the last projection). Keeps the follower on its own branch where a trail
// crosses itself, and stops it flipping back to the incoming segment when a
// bias holds the pen inside a corner.
const TRACK_BEHIND: f64 = 1.0;
const TRACK_AHEAD: f64 = 40.0;

/// Turns sharper than this are aimed at rather than cut.
pub const CORNER_TURN: f64 = std::f64::consts::PI / 6.0;
/// Distance from a corner at which the subject starts steering past it (mm).
pub const CORNER_RELEASE: f64 = 3.0;

/// Fastest the pursued point moves (mm/s); smooths jumps at corners.
pub const AIM_SLEW: f64 = 200.0;

/// Progress rate below which the subject counts as stuck (mm/s).
pub const STALL_RATE: f64 = 2.0;
/// Time for effort to build from nothing to full while stuck (s).
pub const STALL_TIME: f64 = 1.0;
/// Lookahead multiplier added at full effort.
pub const STALL_GAIN: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Healthy,
    Patient,
}

impl SubjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubjectKind::Healthy => "healthy",
            SubjectKind::Patient => "patient",
        }
    }
}

impl std::fmt::Display for SubjectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectModel {
    pub kind: SubjectKind,
    /// N/mm toward the pursued point.
    pub pursuit_gain: f64,
    /// mm along the trail ahead of the pen's projection.
    pub lookahead: f64,
    /// N
    pub tremor_amplitude: f64,
    /// Hz
    pub tremor_frequency: f64,
    /// Constant displacement of the pursued point (mm), in the frame of the
    /// trail: x to the right of the direction of travel, y along it.
    pub bias_offset: Vector2<f64>,
    /// N, per axis, resampled every tick.
    pub noise_sigma: f64,
    /// Poisson rate of jerk spikes (1/s).
    pub jerk_rate: f64,
    pub seed: u64,
}

impl SubjectModel {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let fields = [
            ("pursuit_gain", self.pursuit_gain),
            ("lookahead", self.lookahead),
            ("tremor_amplitude", self.tremor_amplitude),
            ("tremor_frequency", self.tremor_frequency),
            ("noise_sigma", self.noise_sigma),
            ("jerk_rate", self.jerk_rate),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimulationError::InvalidModel(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.bias_offset.iter().all(|v| v.is_finite()) {
            return Err(SimulationError::InvalidModel("bias_offset must be finite".into()));
        }
        Ok(())
    }

    /// A subject with no stochastic terms and no bias.
    pub fn quiet(kind: SubjectKind, pursuit_gain: f64, lookahead: f64) -> Self {
        SubjectModel {
            kind,
            pursuit_gain,
            lookahead,
            tremor_amplitude: 0.0,
            tremor_frequency: 0.0,
            bias_offset: Vector2::zeros(),
            noise_sigma: 0.0,
            jerk_rate: 0.0,
            seed: 0,
        }
    }
}

/// Runtime state of one synthetic subject tracing one trail.
#[derive(Debug, Clone)]
pub struct Subject {
    model: SubjectModel,
    path: TrailPath,
    rng: ChaCha8Rng,
    tremor_direction: Vector2<f64>,
    progress: Option<f64>,
    corner: Option<f64>,
    effort: f64,
    tick_progress: Option<f64>,
    last_goal: Option<(f64, Point2<f64>)>,
    noise: Vector3<f64>,
    spike: Option<(f64, Vector2<f64>)>,
    tick_period: f64,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector2<f64> {
    let a = rng.random::<f64>() * TAU;
    Vector2::new(a.cos(), a.sin())
}

impl Subject {
    pub fn new(model: SubjectModel, trail: &Trail, tick_hz: u32) -> Result<Self, SimulationError> {
        model.validate()?;
        let path = TrailPath::new(trail)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        let tremor_direction = random_unit(&mut rng);
        Ok(Subject {
            model,
            path,
            rng,
            tremor_direction,
            progress: None,
            corner: None,
            effort: 0.0,
            tick_progress: None,
            last_goal: None,
            noise: Vector3::zeros(),
            spike: None,
            tick_period: 1.0 / f64::from(tick_hz.max(1)),
        })
    }

    pub fn model(&self) -> &SubjectModel {
        &self.model
    }

    /// Arc length of the pen's last projection onto the trail.
    pub fn progress(&self) -> Option<f64> {
        self.progress.map(|s| self.path.wrap(s))
    }

    /// Current lookahead: pushes further ahead while stuck.
    pub fn lookahead(&self) -> f64 {
        self.model.lookahead * (1.0 + STALL_GAIN * self.effort)
    }

    /// Point the subject is steering toward, bias included.
    pub fn pursued_point(&mut self, pen: Point2<f64>) -> Point2<f64> {
        // Progress is kept unwrapped so it compares with corner positions
        // across laps.
        let s = match self.progress {
            None => self.path.project(pen),
            Some(last) => {
                let lw = self.path.wrap(last);
                let sw = self.path.project_within(pen, lw - TRACK_BEHIND, lw + TRACK_AHEAD);
                let mut delta = sw - lw;
                let total = self.path.length();
                if self.path.looping() && total > 0.0 {
                    delta -= (delta / total).round() * total;
                }
                last + delta
            }
        };
        let mut s = s;
        let corner = *self
            .corner
            .get_or_insert_with(|| self.path.next_corner(s, CORNER_TURN).unwrap_or(f64::INFINITY));
        let b = self.model.bias_offset;
        let path = &self.path;
        let aim = |ahead: f64, along: Vector2<f64>| {
            let right = Vector2::new(along.y, -along.x);
            path.point_at(ahead) + right * b.x + along * b.y
        };
        // Like a person connecting dots: the aim point stops at a sharp
        // corner until the pen has reached it, even if the pen cut inside.
        if s + self.lookahead() > corner {
            let held = aim(corner, path.direction_at(corner - 1e-9));
            if (held - pen).norm() > CORNER_RELEASE {
                self.progress = Some(s.min(corner));
                return held;
            }
            s = s.max(corner);
            let next = path.next_corner(corner + 1e-6, CORNER_TURN).unwrap_or(f64::INFINITY);
            self.corner = Some(if next > corner + 1e-3 { next } else { f64::INFINITY });
        }
        self.progress = Some(s);
        let ahead = s + self.lookahead();
        aim(ahead, path.direction_at(ahead))
    }
}

impl IntentSource for Subject {
    fn begin_tick(&mut self, t: f64) {
        if let Some(now) = self.progress {
            let rate = self.tick_progress.map_or(f64::INFINITY, |p| (now - p) / self.tick_period);
            let step = self.tick_period / STALL_TIME;
            self.effort = if rate < STALL_RATE {
                (self.effort + step).min(1.0)
            } else {
                (self.effort - step).max(0.0)
            };
            self.tick_progress = Some(now);
        }
        let m = &self.model;
        let sigma = m.noise_sigma;
        if sigma > 0.0 {
            let planar = Normal::new(0.0, sigma).expect("sigma is finite and positive");
            let vertical = Normal::new(0.0, sigma / 2.0).expect("sigma is finite and positive");
            self.noise = Vector3::new(
                planar.sample(&mut self.rng),
                planar.sample(&mut self.rng),
                vertical.sample(&mut self.rng),
            );
        }
        if let Some((end, _)) = self.spike {
            if t >= end {
                self.spike = None;
            }
        }
        if m.jerk_rate > 0.0 && self.spike.is_none() {
            let p = 1.0 - (-m.jerk_rate * self.tick_period).exp();
            if self.rng.random::<f64>() < p {
                let dir = random_unit(&mut self.rng);
                self.spike = Some((t + SPIKE_DURATION, dir));
            }
        }
    }

    fn intent(&mut self, pen: &PenState, t: f64) -> Vector3<f64> {
        let m = self.model;
        let pen_xy = pen.position.xy();
        let mut goal = self.pursued_point(pen_xy);
        if let Some((t0, prev)) = self.last_goal {
            let step = AIM_SLEW * (t - t0).max(0.0);
            let d = goal - prev;
            if d.norm() > step {
                goal = prev + d.normalize() * step;
            }
        }
        self.last_goal = Some((t, goal));
        let mut planar = (goal - pen_xy) * m.pursuit_gain;
        planar += self.tremor_direction * (m.tremor_amplitude * (TAU * m.tremor_frequency * t).sin());
        if let Some((_, dir)) = self.spike {
            planar += dir * (SPIKE_GAIN * m.noise_sigma);
        }
        Vector3::new(planar.x, planar.y, 0.0) + self.noise
    }
}
