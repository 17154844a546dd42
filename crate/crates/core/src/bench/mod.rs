//! The analytic benchmark, replication studies and their reports.

pub mod analytic;
pub mod config;
pub mod report;
pub mod study;

pub use config::Settings;
pub use report::{emit_plot_data, ConvergenceReport, CurveSummary, ThresholdCost};
pub use study::{run_study, Algorithm, ReferenceSet, ReplicationOutcome, StudyResult, StudySpec, Variant};
