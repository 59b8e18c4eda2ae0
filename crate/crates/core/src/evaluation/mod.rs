//! Official metrics, confidence intervals and the experiment protocols.

mod ci;
mod experiment;
mod metrics;
mod report;

pub use ci::{ci95_t, t_quantile_975};
pub use experiment::{
    check_cv_data, check_traintest_data, run_cv, run_single, run_traintest, Checkpoint,
    CheckpointPolicy, ExperimentResult, ExperimentSpec, MetricReport, RunResult, TaskScore,
    VALID_FRACTION,
};
pub use metrics::{accuracy, f1_macro, f1_positive, ConfusionCounts, Metric};
pub use report::{format_table, parse_records, reports_to_records};
