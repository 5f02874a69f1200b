use std::path::PathBuf;

use streampca::Error as CoreError;
use thiserror::Error;

/// Failures surfaced by the command-line front end, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) | Self::Output { .. } => 2,
            Self::Numeric(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Io { .. }
            | CoreError::DataFormat { .. }
            | CoreError::EndOfStream { .. }
            | CoreError::SampleCount { .. } => Self::Data(msg),
            CoreError::NumericOverflow { .. }
            | CoreError::NonConvergence { .. }
            | CoreError::DegenerateIterate
            | CoreError::InsufficientPoints { .. } => Self::Numeric(msg),
            _ => Self::Config(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
