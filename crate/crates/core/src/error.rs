use std::io;

use thiserror::Error;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, invalid hyperparameters or unknown keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A generator produced a non-finite value.
    #[error("generation error at step {step}: {message}")]
    Generation { step: usize, message: String },

    /// The requested evaluation has no reference for this dataset.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The latent state became non-finite during a forward pass.
    #[error("inference error at t={time}: {message}")]
    Inference { time: f64, message: String },

    /// Training diverged.
    #[error("training error in epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// A finite-difference probe evaluated to a non-finite value.
    #[error("non-finite evaluation at coordinate {coordinate}: {message}")]
    NonFinite { coordinate: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Generation { .. } => "generation",
            Error::Unsupported(_) => "unsupported",
            Error::Inference { .. } => "inference",
            Error::Training { .. } => "training",
            Error::NonFinite { .. } => "non_finite",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
