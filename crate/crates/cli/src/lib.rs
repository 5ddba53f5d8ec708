//! Experiment driver behind the `fedembed` binary: configuration files,
//! subcommands and CSV reports.

pub mod commands;
pub mod config;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, Mode, Preset};
