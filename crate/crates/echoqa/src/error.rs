//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch.
    #[error("shape: {0}")]
    Shape(String),

    /// Invalid configuration or parameter value.
    #[error("config: {0}")]
    Config(String),

    /// Malformed file contents.
    #[error("format: {0}")]
    Format(String),

    /// Training produced a non-finite loss. Carries diagnostics.
    #[error("non-finite loss at epoch {epoch} batch {batch}: {detail}")]
    NanLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// Benchmark could not produce a valid report.
    #[error("benchmark: {0}")]
    Benchmark(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
