use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// The variants follow the failure classes the command-line driver maps to
/// exit codes: configuration problems, bad inputs, numeric failures during
/// estimation, training or analysis, and filesystem I/O.
#[derive(Debug, Error)]
pub enum GfrError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("training error at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, GfrError>;

impl GfrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GfrError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        GfrError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        GfrError::Config(message.into())
    }

    pub(crate) fn input(message: impl Into<String>) -> Self {
        GfrError::Input(message.into())
    }
}
