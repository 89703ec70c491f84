//! Experiment driver behind the `tmlab` binary: JSON configs, run
//! directories with manifests, and the train / sample / eval / rank / check
//! commands.

pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::CliError;
