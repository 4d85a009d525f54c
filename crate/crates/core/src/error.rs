use std::path::PathBuf;

use thiserror::Error;

use crate::sigsim::RateMatrixError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rate matrix: {0}")]
    RateMatrix(#[from] RateMatrixError),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("diffusion step {t} outside [1, {t_max}]")]
    StepOutOfRange { t: usize, t_max: usize },

    #[error("non-finite values produced by {0}")]
    NonFinite(String),

    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed data file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
