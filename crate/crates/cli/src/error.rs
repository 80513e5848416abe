use std::path::PathBuf;

use thiserror::Error;

/// Failures of a command, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<lgcompose_core::ModelError> for CliError {
    fn from(e: lgcompose_core::ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<lgcompose_core::DataError> for CliError {
    fn from(e: lgcompose_core::DataError) -> Self {
        CliError::Input(e.to_string())
    }
}
