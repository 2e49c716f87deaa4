use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (unknown backbone, bad hyperparameter, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data failed validation (shape/length mismatch, bad label, empty split, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A vector whose norm is too small for a cosine to be defined.
    #[error("degenerate vector: {0}")]
    Degenerate(String),

    /// NaN or infinity produced by a computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// Undecodable image or malformed input file.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed manifest line.
    #[error("manifest {path}: line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
