//! Trails: ordered targets joined by straight segments, each discretized into
//! candidate points at a fixed spacing.
//!
//! Everything here works in the trail plane (z = 0), millimeters, with the
//! origin at the center of the workspace. The candidate points drive the
//! deviation metric and the path-leading force; [`TrailPath`] offers a
//! continuous arc-length view of the same polyline for code that needs smooth
//! progress along the trail.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-extent of the planar workspace along x (mm).
pub const WORKSPACE_HALF_WIDTH: f64 = 215.0;
/// Half-extent of the planar workspace along y (mm).
pub const WORKSPACE_HALF_HEIGHT: f64 = 175.0;
/// Default distance between interpolated points (mm).
pub const DEFAULT_SPACING: f64 = 8.0;

/// Two candidates closer than this are the same point.
const COINCIDENT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("position ({x}, {y}) lies outside the workspace")]
    OutOfBounds { x: f64, y: f64 },
    #[error("no target with id {0}")]
    TargetNotFound(u32),
    #[error("at least two targets are required, trail has {found}")]
    InsufficientTargets { found: usize },
    #[error("spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("unknown shape `{0}`")]
    UnknownShape(String),
    #[error("shape size must be positive, got {0}")]
    InvalidSize(f64),
    #[error("direction vector has zero length")]
    ZeroDirection,
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

pub fn in_workspace(p: &Point2<f64>) -> bool {
    p.x.is_finite()
        && p.y.is_finite()
        && p.x.abs() <= WORKSPACE_HALF_WIDTH
        && p.y.abs() <= WORKSPACE_HALF_HEIGHT
}

fn check_bounds(p: &Point2<f64>) -> Result<()> {
    if in_workspace(p) {
        Ok(())
    } else {
        Err(GeometryError::OutOfBounds { x: p.x, y: p.y })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub id: u32,
    pub order_index: usize,
    pub position: Point2<f64>,
}

/// Straight connection between two consecutive targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub from_index: usize,
    pub to_index: usize,
    /// Candidate points for the nearest-point search: the start target, the
    /// interpolated points, then the end target (omitted when the last
    /// interpolated point already lands on it).
    pub points: Vec<Point2<f64>>,
    /// Number of interpolated points, `floor(length / spacing)`.
    pub interior_count: usize,
    pub length: f64,
}

impl Segment {
    fn build(from_index: usize, to_index: usize, a: Point2<f64>, b: Point2<f64>, s: f64) -> Self {
        let length = (b - a).norm();
        let interior_count = (length / s).floor() as usize;
        let heading = (b.y - a.y).atan2(b.x - a.x);
        let (sin, cos) = heading.sin_cos();

        let mut points = Vec::with_capacity(interior_count + 2);
        points.push(a);
        for k in 1..=interior_count {
            let step = k as f64 * s;
            points.push(Point2::new(a.x + step * cos, a.y + step * sin));
        }
        let last = *points.last().expect("start point pushed");
        if interior_count == 0 || (last - b).norm() > COINCIDENT_EPS {
            points.push(b);
        }

        Segment {
            from_index,
            to_index,
            points,
            interior_count,
            length,
        }
    }

    /// Interpolated points strictly after the start target.
    pub fn interior(&self) -> &[Point2<f64>] {
        &self.points[1..=self.interior_count]
    }

    pub fn direction(&self) -> Option<Vector2<f64>> {
        let d = self.points.last()? - self.points[0];
        let n = d.norm();
        (n > COINCIDENT_EPS).then(|| d / n)
    }
}

/// Closest candidate point to a query position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearestPoint {
    pub point: Point2<f64>,
    pub segment_index: usize,
    pub candidate_index: usize,
    pub distance: f64,
}

/// An ordered set of targets, optionally closed into a loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Trail {
    pub name: String,
    targets: Vec<Target>,
    looping: bool,
    spacing: f64,
    segments: Vec<Segment>,
    stale: bool,
    next_id: u32,
}

impl Default for Trail {
    fn default() -> Self {
        Trail::new("untitled")
    }
}

impl Trail {
    pub fn new(name: impl Into<String>) -> Self {
        Trail {
            name: name.into(),
            targets: Vec::new(),
            looping: false,
            spacing: DEFAULT_SPACING,
            segments: Vec::new(),
            stale: true,
            next_id: 1,
        }
    }

    pub fn with_spacing(mut self, spacing: f64) -> Result<Self> {
        self.set_spacing(spacing)?;
        Ok(self)
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn looping(&self) -> bool {
        self.looping
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// True when targets changed since segments were last generated.
    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn target(&self, id: u32) -> Option<&Target> {
        self.targets.iter().find(|t| t.id == id)
    }

    pub fn add_target(&mut self, position: Point2<f64>) -> Result<&Target> {
        check_bounds(&position)?;
        let target = Target {
            id: self.next_id,
            order_index: self.targets.len(),
            position,
        };
        self.next_id += 1;
        self.targets.push(target);
        self.stale = true;
        Ok(self.targets.last().expect("just pushed"))
    }

    /// Re-inserts a target with a known id, as when loading a saved trail.
    pub(crate) fn push_target_with_id(&mut self, id: u32, position: Point2<f64>) -> Result<()> {
        check_bounds(&position)?;
        self.targets.push(Target {
            id,
            order_index: self.targets.len(),
            position,
        });
        self.next_id = self.next_id.max(id.saturating_add(1));
        self.stale = true;
        Ok(())
    }

    /// Moves a target. Segments that were already generated are rebuilt at once.
    pub fn move_target(&mut self, id: u32, position: Point2<f64>) -> Result<()> {
        check_bounds(&position)?;
        let target = self
            .targets
            .iter_mut()
            .find(|t| t.id == id)
            .ok_or(GeometryError::TargetNotFound(id))?;
        target.position = position;
        if !self.segments.is_empty() {
            self.generate_segments()?;
        }
        Ok(())
    }

    pub fn set_looping(&mut self, looping: bool) -> Result<()> {
        self.looping = looping;
        if !self.segments.is_empty() {
            self.generate_segments()?;
        }
        Ok(())
    }

    pub fn set_spacing(&mut self, spacing: f64) -> Result<()> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(GeometryError::InvalidSpacing(spacing));
        }
        self.spacing = spacing;
        if !self.segments.is_empty() {
            self.generate_segments()?;
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.targets.clear();
        self.segments.clear();
        self.stale = true;
    }

    pub fn generate_segments(&mut self) -> Result<()> {
        let n = self.targets.len();
        if n < 2 {
            return Err(GeometryError::InsufficientTargets { found: n });
        }
        let edges = if self.looping { n } else { n - 1 };
        self.segments = (0..edges)
            .map(|i| {
                let j = (i + 1) % n;
                Segment::build(
                    i,
                    j,
                    self.targets[i].position,
                    self.targets[j].position,
                    self.spacing,
                )
            })
            .collect();
        self.stale = false;
        Ok(())
    }

    fn require_segments(&self) -> Result<()> {
        if self.segments.is_empty() {
            Err(GeometryError::InsufficientTargets {
                found: self.targets.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Global minimum-distance candidate. Ties go to the lowest
    /// `(segment_index, candidate_index)`.
    pub fn nearest_point(&self, pen: Point2<f64>) -> Result<NearestPoint> {
        self.require_segments()?;
        let mut best: Option<NearestPoint> = None;
        for (si, seg) in self.segments.iter().enumerate() {
            for (ci, p) in seg.points.iter().enumerate() {
                let d = (p - pen).norm();
                if best.is_none_or(|b| d < b.distance) {
                    best = Some(NearestPoint {
                        point: *p,
                        segment_index: si,
                        candidate_index: ci,
                        distance: d,
                    });
                }
            }
        }
        Ok(best.expect("segments are non-empty"))
    }

    /// Sum of straight inter-target distances, including the closing edge of
    /// a looping trail.
    pub fn perimeter(&self) -> Result<f64> {
        let n = self.targets.len();
        if n < 2 {
            return Err(GeometryError::InsufficientTargets { found: n });
        }
        let open: f64 = self
            .targets
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum();
        let closing = if self.looping {
            (self.targets[0].position - self.targets[n - 1].position).norm()
        } else {
            0.0
        };
        Ok(open + closing)
    }

    /// The target the pen should head for: the end target of the active
    /// segment, or the one after it once the pen sits on that end target.
    pub fn next_target(&self, nearest: &NearestPoint) -> &Target {
        let seg = &self.segments[nearest.segment_index];
        let at_end = nearest.candidate_index + 1 == seg.points.len();
        if at_end {
            if let Some(next) = self.segments.get(nearest.segment_index + 1) {
                return &self.targets[next.to_index];
            }
            if self.looping {
                return &self.targets[self.segments[0].to_index];
            }
        }
        &self.targets[seg.to_index]
    }

    pub fn active_segment(&self, nearest: &NearestPoint) -> &Segment {
        &self.segments[nearest.segment_index]
    }
}

/// The five reference trails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Hexagon,
    Triangle,
    Circle,
    Infinity,
    #[serde(rename = "letter_B")]
    LetterB,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Hexagon,
        Shape::Triangle,
        Shape::Circle,
        Shape::Infinity,
        Shape::LetterB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Hexagon => "hexagon",
            Shape::Triangle => "triangle",
            Shape::Circle => "circle",
            Shape::Infinity => "infinity",
            Shape::LetterB => "letter_B",
        }
    }

    /// Size used for the recorded protocol: side length for the polygons,
    /// radius for the circle, half-width for the lemniscate, height for `B`.
    pub fn default_size(self) -> f64 {
        match self {
            Shape::Hexagon => 60.0,
            Shape::Triangle => 100.0,
            Shape::Circle => 60.0,
            Shape::Infinity => 100.0,
            Shape::LetterB => 120.0,
        }
    }

    pub fn build(self, size: f64) -> Result<Trail> {
        builtin_shape(self, size)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hexagon" => Ok(Shape::Hexagon),
            "triangle" => Ok(Shape::Triangle),
            "circle" => Ok(Shape::Circle),
            "infinity" | "∞" => Ok(Shape::Infinity),
            "letter_b" | "b" => Ok(Shape::LetterB),
            _ => Err(GeometryError::UnknownShape(s.to_string())),
        }
    }
}

// Unit-height outline of `B`: spine upward, upper bowl, lower bowl.
const LETTER_B: [(f64, f64); 14] = [
    (0.0, 0.0),
    (0.0, 1.0 / 3.0),
    (0.0, 2.0 / 3.0),
    (0.0, 1.0),
    (0.30, 1.0),
    (0.48, 0.93),
    (0.55, 0.75),
    (0.48, 0.57),
    (0.30, 0.50),
    (0.52, 0.43),
    (0.62, 0.25),
    (0.52, 0.07),
    (0.30, 0.0),
    (0.12, 0.0),
];

/// Builds one of the reference trails, centered on the origin, looping, with
/// segments generated.
pub fn builtin_shape(shape: Shape, size: f64) -> Result<Trail> {
    if !(size.is_finite() && size > 0.0) {
        return Err(GeometryError::InvalidSize(size));
    }
    let points: Vec<Point2<f64>> = match shape {
        Shape::Triangle => regular_polygon(3, size),
        Shape::Hexagon => regular_polygon(6, size),
        Shape::Circle => (0..24)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_2 - std::f64::consts::TAU * k as f64 / 24.0;
                Point2::new(size * a.cos(), size * a.sin())
            })
            .collect(),
        Shape::Infinity => (0..32)
            .map(|k| {
                // Half-step phase keeps targets off the self-crossing.
                let t = std::f64::consts::TAU * (k as f64 + 0.5) / 32.0;
                let d = 1.0 + t.sin() * t.sin();
                Point2::new(size * t.cos() / d, size * t.sin() * t.cos() / d)
            })
            .collect(),
        Shape::LetterB => LETTER_B
            .iter()
            .map(|&(x, y)| Point2::new(size * (x - 0.31), size * (y - 0.5)))
            .collect(),
    };

    let mut trail = Trail::new(shape.name());
    for p in points {
        trail.add_target(p)?;
    }
    trail.looping = true;
    trail.generate_segments()?;
    Ok(trail)
}

/// Regular polygon with the given side length, first vertex at the top,
/// vertices clockwise.
fn regular_polygon(sides: usize, side: f64) -> Vec<Point2<f64>> {
    let radius = side / (2.0 * (std::f64::consts::PI / sides as f64).sin());
    (0..sides)
        .map(|k| {
            let a = std::f64::consts::FRAC_PI_2 - std::f64::consts::TAU * k as f64 / sides as f64;
            Point2::new(radius * a.cos(), radius * a.sin())
        })
        .collect()
}

/// Arc-length parametrization of a trail's polyline.
///
/// Arc length 0 is target 0; on a looping trail positions wrap modulo the
/// perimeter.
#[derive(Debug, Clone)]
pub struct TrailPath {
    starts: Vec<Point2<f64>>,
    dirs: Vec<Vector2<f64>>,
    lengths: Vec<f64>,
    offsets: Vec<f64>,
    total: f64,
    looping: bool,
}

impl TrailPath {
    pub fn new(trail: &Trail) -> Result<Self> {
        trail.require_segments()?;
        let mut starts = Vec::new();
        let mut dirs = Vec::new();
        let mut lengths = Vec::new();
        let mut offsets = Vec::new();
        let mut total = 0.0;
        for seg in trail.segments() {
            let a = trail.targets[seg.from_index].position;
            let b = trail.targets[seg.to_index].position;
            starts.push(a);
            dirs.push((b - a).try_normalize(COINCIDENT_EPS).unwrap_or_else(Vector2::zeros));
            lengths.push(seg.length);
            offsets.push(total);
            total += seg.length;
        }
        Ok(TrailPath {
            starts,
            dirs,
            lengths,
            offsets,
            total,
            looping: trail.looping(),
        })
    }

    pub fn length(&self) -> f64 {
        self.total
    }

    pub fn looping(&self) -> bool {
        self.looping
    }

    /// Maps an arc length into `[0, length]` (modulo on looping trails).
    pub fn wrap(&self, s: f64) -> f64 {
        if self.looping && self.total > 0.0 {
            s.rem_euclid(self.total)
        } else {
            s.clamp(0.0, self.total)
        }
    }

    pub fn point_at(&self, s: f64) -> Point2<f64> {
        let s = self.wrap(s);
        let i = match self.offsets.partition_point(|&o| o <= s) {
            0 => 0,
            i => i - 1,
        };
        let local = (s - self.offsets[i]).min(self.lengths[i]);
        self.starts[i] + self.dirs[i] * local
    }

    pub fn direction_at(&self, s: f64) -> Vector2<f64> {
        let s = self.wrap(s);
        let i = match self.offsets.partition_point(|&o| o <= s) {
            0 => 0,
            i => i - 1,
        };
        self.dirs[i]
    }

    /// Arc length of the closest point on the polyline to `p`, searched within
    /// `[from, to]` (interpreted modulo the perimeter on looping trails).
    pub fn project_within(&self, p: Point2<f64>, from: f64, to: f64) -> f64 {
        let mut best = (f64::INFINITY, from);
        let span = to - from;
        if span <= 0.0 {
            return self.wrap(from);
        }
        // Unroll the window over at most two laps so wrapping segments are
        // visited in order.
        let laps: &[f64] = if self.looping { &[-1.0, 0.0, 1.0] } else { &[0.0] };
        for &lap in laps {
            let base = lap * self.total;
            for i in 0..self.starts.len() {
                let lo = base + self.offsets[i];
                let hi = lo + self.lengths[i];
                let a = lo.max(from);
                let b = hi.min(to);
                if a > b {
                    continue;
                }
                let t = (p - self.starts[i]).dot(&self.dirs[i]);
                let local = (t + lo).clamp(a, b) - lo;
                let q = self.starts[i] + self.dirs[i] * local;
                let d = (q - p).norm_squared();
                if d < best.0 {
                    best = (d, lo + local);
                }
            }
        }
        self.wrap(best.1)
    }

    /// Unrestricted projection onto the whole trail.
    pub fn project(&self, p: Point2<f64>) -> f64 {
        self.project_within(p, 0.0, self.total)
    }

    /// Arc length of the first vertex after `s` where the trail turns by at
    /// least `min_turn` radians. On looping trails the result may exceed the
    /// perimeter (it is not wrapped), so it always compares with `s`.
    pub fn next_corner(&self, s: f64, min_turn: f64) -> Option<f64> {
        let n = self.starts.len();
        if n == 0 {
            return None;
        }
        let base = s - self.wrap(s);
        let s = self.wrap(s);
        let first = match self.offsets.partition_point(|&o| o <= s) {
            0 => 0,
            i => i - 1,
        };
        for k in 0..n {
            let i = first + k;
            if !self.looping && i + 1 >= n {
                return Some(base + self.total);
            }
            let (lap, seg) = (i / n, i % n);
            let next = (seg + 1) % n;
            let turn = self.dirs[seg].dot(&self.dirs[next]).clamp(-1.0, 1.0).acos();
            if turn >= min_turn {
                return Some(base + lap as f64 * self.total + self.offsets[seg] + self.lengths[seg]);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(a: (f64, f64), b: (f64, f64), s: f64) -> Trail {
        let mut t = Trail::new("line").with_spacing(s).unwrap();
        t.add_target(Point2::new(a.0, a.1)).unwrap();
        t.add_target(Point2::new(b.0, b.1)).unwrap();
        t.generate_segments().unwrap();
        t
    }

    #[test]
    fn add_target_assigns_order_and_rejects_out_of_bounds() {
        let mut t = Trail::new("t");
        t.add_target(Point2::new(0.0, 0.0)).unwrap();
        assert_eq!(t.targets().len(), 1);
        assert!(t.segments().is_empty());
        t.add_target(Point2::new(100.0, 0.0)).unwrap();
        assert_eq!(t.targets()[1].order_index, 1);
        assert!(t.is_stale());
        assert_eq!(
            t.add_target(Point2::new(999.0, 0.0)).unwrap_err(),
            GeometryError::OutOfBounds { x: 999.0, y: 0.0 }
        );
    }

    #[test]
    fn generate_requires_two_targets() {
        let mut t = Trail::new("t");
        t.add_target(Point2::new(0.0, 0.0)).unwrap();
        assert_eq!(
            t.generate_segments().unwrap_err(),
            GeometryError::InsufficientTargets { found: 1 }
        );
        assert!(t.nearest_point(Point2::origin()).is_err());
    }

    #[test]
    fn interpolation_on_axis() {
        let t = line((0.0, 0.0), (24.0, 0.0), 8.0);
        let seg = &t.segments()[0];
        assert_eq!(seg.interior_count, 3);
        let xs: Vec<f64> = seg.interior().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![8.0, 16.0, 24.0]);
        // End target coincides with the last interior point.
        assert_eq!(seg.points.len(), 4);

        let t = line((0.0, 0.0), (20.0, 0.0), 8.0);
        let seg = &t.segments()[0];
        assert_eq!(seg.interior_count, 2);
        assert_eq!(seg.interior(), &[Point2::new(8.0, 0.0), Point2::new(16.0, 0.0)]);
        assert_eq!(seg.points.len(), 4);
    }

    #[test]
    fn interpolation_on_three_four_five_triangle() {
        let t = line((0.0, 0.0), (6.0, 8.0), 8.0);
        let seg = &t.segments()[0];
        assert_eq!(seg.interior_count, 1);
        // cos = 6/10, sin = 8/10 by hand.
        assert_relative_eq!(seg.interior()[0].x, 4.8, epsilon = 1e-12);
        assert_relative_eq!(seg.interior()[0].y, 6.4, epsilon = 1e-12);
    }

    #[test]
    fn nearest_point_examples() {
        let t = line((0.0, 0.0), (24.0, 0.0), 8.0);
        let n = t.nearest_point(Point2::new(7.0, 3.0)).unwrap();
        assert_eq!(n.point, Point2::new(8.0, 0.0));
        assert_relative_eq!(n.distance, 10f64.sqrt(), epsilon = 1e-12);

        let n = t.nearest_point(Point2::new(16.0, 0.0)).unwrap();
        assert_eq!(n.distance, 0.0);

        let n = t.nearest_point(Point2::new(4.0, 3.0)).unwrap();
        assert_eq!(n.point, Point2::new(0.0, 0.0));
        assert_eq!(n.candidate_index, 0);
        assert_eq!(n.distance, 5.0);
    }

    #[test]
    fn move_target_regenerates() {
        let mut t = line((0.0, 0.0), (24.0, 0.0), 8.0);
        let before = t.segments().to_vec();
        let id = t.targets()[1].id;
        t.move_target(id, Point2::new(24.0, 0.0)).unwrap();
        assert_eq!(t.segments(), &before[..]);
        t.move_target(id, Point2::new(40.0, 0.0)).unwrap();
        assert_eq!(t.segments()[0].interior_count, 5);
        assert!(!t.is_stale());
        assert_eq!(
            t.move_target(77, Point2::origin()).unwrap_err(),
            GeometryError::TargetNotFound(77)
        );
    }

    #[test]
    fn perimeters() {
        let mut tri = builtin_shape(Shape::Triangle, 100.0).unwrap();
        assert_relative_eq!(tri.perimeter().unwrap(), 300.0, epsilon = 1e-9);
        tri.set_looping(false).unwrap();
        assert_relative_eq!(tri.perimeter().unwrap(), 200.0, epsilon = 1e-9);

        let mut sq = Trail::new("square");
        for (x, y) in [(0.0, 0.0), (50.0, 0.0), (50.0, 50.0), (0.0, 50.0)] {
            sq.add_target(Point2::new(x, y)).unwrap();
        }
        sq.set_looping(true).unwrap();
        sq.generate_segments().unwrap();
        assert_relative_eq!(sq.perimeter().unwrap(), 200.0, epsilon = 1e-12);
    }

    #[test]
    fn builtin_shapes() {
        let hex = builtin_shape(Shape::Hexagon, 60.0).unwrap();
        assert_eq!(hex.targets().len(), 6);
        assert_relative_eq!(hex.perimeter().unwrap(), 360.0, epsilon = 1e-9);

        let circle = builtin_shape(Shape::Circle, 60.0).unwrap();
        assert_eq!(circle.targets().len(), 24);
        let chord = 24.0 * 2.0 * 60.0 * (std::f64::consts::PI / 24.0).sin();
        assert_relative_eq!(circle.perimeter().unwrap(), chord, epsilon = 1e-9);
        assert_relative_eq!(circle.perimeter().unwrap(), 375.9154, epsilon = 1e-4);

        assert_eq!(builtin_shape(Shape::Infinity, 100.0).unwrap().targets().len(), 32);
        assert_eq!(builtin_shape(Shape::LetterB, 120.0).unwrap().targets().len(), 14);
        for shape in Shape::ALL {
            let t = shape.build(shape.default_size()).unwrap();
            assert!(t.looping());
            assert_eq!(t.segments().len(), t.targets().len());
        }
        assert!("pentagon".parse::<Shape>().is_err());
        assert!(builtin_shape(Shape::Circle, 400.0).is_err());
    }

    #[test]
    fn next_target_rules() {
        let tri = builtin_shape(Shape::Triangle, 100.0).unwrap();
        let mid = nalgebra::center(&tri.targets()[0].position, &tri.targets()[1].position);
        let n = tri.nearest_point(mid).unwrap();
        assert_eq!(n.segment_index, 0);
        assert_eq!(tri.next_target(&n).order_index, 1);

        let closing = nalgebra::center(&tri.targets()[2].position, &tri.targets()[0].position);
        let n = tri.nearest_point(closing).unwrap();
        assert_eq!(n.segment_index, 2);
        assert_eq!(tri.next_target(&n).order_index, 0);

        // Exactly on the shared corner T1: the tie goes to segment 0, whose
        // end target is T1 itself, so the pull moves on to T2.
        let n = tri.nearest_point(tri.targets()[1].position).unwrap();
        assert_eq!(n.segment_index, 0);
        assert_eq!(n.distance, 0.0);
        assert_eq!(tri.next_target(&n).order_index, 2);
    }

    #[test]
    fn next_target_at_open_trail_end_stays() {
        let t = line((0.0, 0.0), (24.0, 0.0), 8.0);
        let n = t.nearest_point(Point2::new(30.0, 0.0)).unwrap();
        assert_eq!(t.next_target(&n).order_index, 1);
    }

    #[test]
    fn path_projection_and_wrap() {
        let sq = {
            let mut t = Trail::new("sq");
            for (x, y) in [(0.0, 0.0), (50.0, 0.0), (50.0, 50.0), (0.0, 50.0)] {
                t.add_target(Point2::new(x, y)).unwrap();
            }
            t.set_looping(true).unwrap();
            t.generate_segments().unwrap();
            t
        };
        let path = TrailPath::new(&sq).unwrap();
        assert_eq!(path.length(), 200.0);
        assert_relative_eq!(path.project(Point2::new(20.0, -3.0)), 20.0);
        assert_relative_eq!(path.project(Point2::new(53.0, 10.0)), 60.0);
        assert_eq!(path.point_at(210.0), Point2::new(10.0, 0.0));
        // Window across the seam.
        let s = path.project_within(Point2::new(-1.0, 5.0), 180.0, 230.0);
        assert_relative_eq!(s, 195.0);
    }
}
