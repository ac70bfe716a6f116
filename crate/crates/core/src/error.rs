use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the appearance-transfer toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// File system failure while reading or writing an image or report.
    #[error("failed to {action} {path}: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },

    /// The file is not one of the supported image formats.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// The image violates a structural invariant (zero dimension, bad length,
    /// component out of range).
    #[error("invalid image: {0}")]
    InvalidImage(String),

    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter violates its documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The exact solver only handles small instances.
    #[error("instance {rows}x{cols} exceeds the exact solver limit of {limit}")]
    ExactSolverLimit {
        rows: usize,
        cols: usize,
        limit: usize,
    },

    /// A numerical method produced NaN or failed to make progress.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A network checkpoint could not be parsed.
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
