//! Loop counting on looping trails.

use nalgebra::Point2;

use crate::geometry::Target;

/// Counts completed loops: the pen has to pass within `radius` of targets
/// 1, 2, ..., n-1 in that order and then come back within `radius` of target 0.
#[derive(Debug, Clone)]
pub struct LoopCounter {
    radius: f64,
    next: usize,
    loops: u32,
}

impl LoopCounter {
    pub fn new(radius: f64) -> Self {
        LoopCounter {
            radius,
            next: 1,
            loops: 0,
        }
    }

    pub fn loops(&self) -> u32 {
        self.loops
    }

    /// Index of the target the counter is waiting for.
    pub fn awaiting(&self) -> usize {
        self.next
    }

    pub fn observe(&mut self, pen: Point2<f64>, targets: &[Target]) -> u32 {
        let n = targets.len();
        if n < 2 {
            return self.loops;
        }
        // Several targets can fall inside the radius at once on dense trails.
        for _ in 0..n {
            let expected = self.next % n;
            if (targets[expected].position - pen).norm() > self.radius {
                break;
            }
            if expected == 0 {
                self.loops += 1;
                self.next = 1;
            } else {
                self.next = expected + 1;
            }
        }
        self.loops
    }
}

pub fn count_loops<I>(positions: I, targets: &[Target], radius: f64) -> u32
where
    I: IntoIterator<Item = Point2<f64>>,
{
    let mut counter = LoopCounter::new(radius);
    for p in positions {
        counter.observe(p, targets);
    }
    counter.loops()
}
