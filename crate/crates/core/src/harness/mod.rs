//! Dataset synthesis, experiment orchestration and rate fitting.

pub mod config;
pub mod data;
pub mod rate;
pub mod run;

pub use config::{ExperimentConfig, HyperSource};
pub use data::{gen_dataset, gen_dataset_with_spectrum, geometric_spectrum};
pub use rate::{compare, compare_result, fit_rate, fit_rate_values, ComparisonReport, RateFit};
pub use run::{envelope_check, run_experiment, run_single, write_outputs, EnvelopeCheck, ExperimentResult, RunResult, RunSummary};
