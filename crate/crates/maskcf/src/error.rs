//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two grids or channel sets that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A linear system that must be invertible is singular.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// An iterative solver produced a non-finite intermediate.
    #[error("numeric divergence at iteration {iteration}: {what}")]
    NumericDivergence { iteration: usize, what: String },

    /// A numeric consistency check failed (e.g. large imaginary residue).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The tracked region degenerated to zero area.
    #[error("tracking lost: {0}")]
    TrackingLost(String),

    /// A data file could not be parsed.
    #[error("parse error in {file} line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Loaded data is structurally inconsistent.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn mismatch(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
