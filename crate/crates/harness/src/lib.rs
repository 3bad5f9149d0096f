//! Experiment runner for the `lrwsde` command-line tool.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{DxRule, Experiment, ExperimentConfig, Precision, Scheme};
pub use error::HarnessError;
pub use experiments::{run, RunOutput, Table};
