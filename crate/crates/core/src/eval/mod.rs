//! Classification and localization metrics, ROC analysis and reports.

pub mod metrics;
pub mod report;
pub mod svg;

pub use metrics::{binary_metrics, roc_auc, within_sample_metrics, BinaryMetrics, Counts, RocCurve, WithinSampleMetrics};
pub use report::{
    emit_report, table1, table2, validate_report, write_csv, DatasetSummary, Method, MethodResult,
    ReconstructionExample, Report, ReportFormat, CSV_COLUMNS,
};
