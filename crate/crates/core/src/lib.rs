//! trailmaker: a simulated trail-tracing platform with assistive force fields.
//!
//! - [`geometry`]: trails, interpolated candidate points, deviation queries.
//! - [`forcefield`]: plane-retaining, path-leading and gravity-compensating
//!   forces with device caps.
//! - [`simulation`]: the pen plant, synthetic subjects, loop counting, safety
//!   shutdown and the session tick loop.
//! - [`persistence`]: trail files, session logs, patient registry, dataset CSV.
//! - [`analytics`]: session metrics, nonparametric statistics, isolation
//!   forest and cohort reports.
//! - [`cohort`]: subject presets and batch cohort simulation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cohort;
pub mod forcefield;
pub mod geometry;
pub mod persistence;
pub mod simulation;
