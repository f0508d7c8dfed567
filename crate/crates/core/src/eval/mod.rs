//! Metrics, the randomized transceiver-assignment protocol and report files.

mod metrics;
mod plan;
mod report;
mod run;
mod synth;

pub use metrics::{accuracy, mean_std, rejection_score, roc_auc, RocPoint};
pub use plan::{sample_experiment, Assignment, ExperimentPlan, Method, Pools};
pub use report::{accuracy_svg, emit_report, metrics_csv, roc_csv, roc_svg, ACCURACY_PLOT, METRICS_FILE, REPORT_FILE, ROC_PLOT};
pub use run::{
    evaluate_classifier, prepare_seed, run_experiment, run_experiment_with, CalibrationCache, ExperimentReport,
    MethodSummary, MetricRow, SeedData, Stat,
};
pub use synth::{capture_seed, cells, synthesize, Cell};
