//! Experiment runner for `fedshift-core`: config parsing, train/sweep/theory
//! dispatch and the CSV, JSON and text outputs.

pub mod cli;
pub mod config;
pub mod run;
pub mod shards;

pub use config::{ConfigBuilder, ConfigError, ExperimentConfig, Mode};
pub use run::run_experiment;
