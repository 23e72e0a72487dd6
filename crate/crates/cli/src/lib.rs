//! Experiment driver: configuration, checkpoints, metrics and the commands
//! behind the `irvi` binary.

pub mod app;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod presets;

pub use config::ExperimentConfig;
pub use error::CliError;
