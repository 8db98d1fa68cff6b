//! Metrics, report tables and the training/evaluation protocols.

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{
    aggregate, compute_metrics, compute_metrics_with, confusion_matrix, ClassMetrics, ConfusionMatrix,
    MetricsError, MetricsReport, ZeroSupport,
};
pub use report::{render_text, render_tsv, ReportRow};
pub use protocol::{check_protocol, encode_items, evaluate_items, run_protocol, FoldResult, Protocol, ProtocolOutcome, TaskFold};
