//! Evaluation metrics and the experiment runner.

pub mod experiment;
pub mod metrics;

pub use experiment::{
    aggregate, run_experiment, run_experiment_with, EvalGrid, ExperimentConfig, Method,
    MetricRecord, RepRecord, METRIC_RECORD_HEADER, REP_RECORD_HEADER,
};
pub use metrics::{coverage_rate, mpl, mrise, pinball, replication_mpl, replication_rmse};
