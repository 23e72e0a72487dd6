use std::io;

use irvi_core::data::DataError;
use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{context}: {source}")]
    Model {
        context: String,
        source: irvi_core::Error,
    },
    #[error("oracle checks failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Io { .. } => "io",
            CliError::Model { source, .. } => match source {
                irvi_core::Error::NonFiniteGradient { .. } => "numeric",
                irvi_core::Error::EnumerationCap { .. } => "capacity",
                _ => "model",
            },
            CliError::CheckFailed(_) => "check",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "data" | "io" => 3,
            "checkpoint" => 4,
            "numeric" => 5,
            "capacity" => 6,
            "check" => 7,
            _ => 8,
        }
    }

    pub fn io(path: &std::path::Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Attaches context to core errors.
pub trait ModelContext<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError>;
}

impl<T> ModelContext<T> for Result<T, irvi_core::Error> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Model {
            context: what.into(),
            source,
        })
    }
}
