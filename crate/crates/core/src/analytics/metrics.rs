//! Per-session performance metrics: average deviation and tracing speed.

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::persistence::{SessionRecord, Tick};
use crate::simulation::AssistMode;

/// Mean of the per-tick deviation `d_s` (mm).
pub fn average_deviation(record: &SessionRecord) -> Result<f64, AnalyticsError> {
    mean_deviation(&record.ticks)
}

pub fn mean_deviation(ticks: &[Tick]) -> Result<f64, AnalyticsError> {
    if ticks.is_empty() {
        return Err(AnalyticsError::EmptyRecord);
    }
    Ok(ticks.iter().map(|t| t.d_s).sum::<f64>() / ticks.len() as f64)
}

/// `perimeter * loops / duration` (mm/s).
pub fn speed_from(perimeter: f64, loops: u32, duration: f64) -> Result<f64, AnalyticsError> {
    if !(duration > 0.0) {
        return Err(AnalyticsError::ZeroDuration);
    }
    Ok(perimeter * f64::from(loops) / duration)
}

/// Speed over the final trail of the session.
pub fn speed(record: &SessionRecord) -> Result<f64, AnalyticsError> {
    let perimeter = record.final_trail().perimeter()?;
    speed_from(perimeter, record.loops_completed(), record.duration())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub subject_id: String,
    pub shape: String,
    pub mode: AssistMode,
    pub average_deviation_mm: f64,
    pub speed_mm_s: f64,
    pub loops: u32,
    pub duration_s: f64,
    /// Perimeter used for the speed (mm).
    pub perimeter_mm: f64,
}

impl MetricSummary {
    pub fn from_record(record: &SessionRecord) -> Result<Self, AnalyticsError> {
        let perimeter = record.final_trail().perimeter()?;
        let duration = record.duration();
        Ok(MetricSummary {
            subject_id: record.header.patient_id.clone(),
            shape: record.header.shape_name.clone(),
            mode: record.header.mode,
            average_deviation_mm: average_deviation(record)?,
            speed_mm_s: speed_from(perimeter, record.loops_completed(), duration)?,
            loops: record.loops_completed(),
            duration_s: duration,
            perimeter_mm: perimeter,
        })
    }
}

/// Running D_avg and speed, updated tick by tick during a live session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamingMetrics {
    sum_d: f64,
    count: u64,
    first_t: Option<f64>,
    last_t: f64,
    loops: u32,
}

impl StreamingMetrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tick: &Tick) {
        self.sum_d += tick.d_s;
        self.count += 1;
        self.first_t.get_or_insert(tick.t);
        self.last_t = tick.t;
        self.loops = tick.loops;
    }

    pub fn ticks(&self) -> u64 {
        self.count
    }

    pub fn average_deviation(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_d / self.count as f64)
    }

    pub fn duration(&self) -> f64 {
        self.first_t.map_or(0.0, |f| self.last_t - f)
    }

    pub fn speed(&self, perimeter: f64) -> Option<f64> {
        speed_from(perimeter, self.loops, self.duration()).ok()
    }
}
