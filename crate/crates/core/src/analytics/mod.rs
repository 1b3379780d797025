//! Session metrics, the nonparametric statistics battery, isolation-forest
//! outlier analysis and cohort reports.

mod iforest;
mod metrics;
mod report;
mod stats;

use thiserror::Error;

pub use iforest::{
    average_path_length, delta_features, iforest_outliers, score_series, IForestConfig, IsolationForest, OutlierReport,
};
pub use metrics::{average_deviation, mean_deviation, speed, speed_from, MetricSummary, StreamingMetrics};
pub use report::{cohort_report, median, Comparison, Group, GroupStats, Labelled, Metric, ShapeRow, StatReport};
pub use stats::{
    dunn, kruskal_wallis, rank_with_ties, shapiro_wilk, DunnResult, KruskalWallis, Normality, PAdjust, ALPHA,
    SHAPIRO_MAX_N, SHAPIRO_MIN_N,
};

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("session has no ticks")]
    EmptyRecord,
    #[error("session duration is zero")]
    ZeroDuration,
    #[error("sample size {n} outside {min}..={max}")]
    SampleSize { n: usize, min: usize, max: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("missing group `{0}`")]
    MissingGroup(String),
    #[error("non-finite input value")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
