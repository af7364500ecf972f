//! Run reports, before/after comparison and degradation breakdowns.

mod compare;
mod report;

pub use compare::{
    compare, render_comparison, AppComparison, ComparisonReport, CountDelta, FloatDelta,
};
pub use report::{
    breakdown, AppReport, AuditCounts, DegradationBreakdown, MetricsReport, NodeReport, Throughput,
    SCHEMA_VERSION,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("runs are not comparable: {0}")]
    IncompatibleRuns(String),
    #[error("report has no snapshot labelled `{0}`")]
    UnknownSnapshot(String),
    #[error("unsupported report schema version {0}")]
    Schema(u32),
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
}
