use std::path::PathBuf;

use thiserror::Error;

use crate::ad::AdError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("autodiff: {0}")]
    Domain(#[from] AdError),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singularity at t = {t}: {message}")]
    Singularity { t: f64, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Input(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Dimension { .. }
            | Error::InvalidParameter(_)
            | Error::Input(_) => 2,
            Error::Domain(_) | Error::Singularity { .. } | Error::NonFinite(_) => 3,
            Error::Io { .. } | Error::Csv(_) | Error::Checkpoint(_) => 4,
        }
    }
}
