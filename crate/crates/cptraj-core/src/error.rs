//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by calibration, simulation, and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Two points (or a point and a pool) do not live in the same space.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A caller-supplied value violates a documented precondition.
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    /// Internal bookkeeping is inconsistent (e.g. a matured prediction has
    /// no issued record). Indicates a driver bug, not bad user data.
    #[error("calibrator state corrupted: {0}")]
    StateCorruption(String),

    /// A chosen threshold fell outside its candidate interval, which would
    /// void the long-term coverage guarantee.
    #[error("threshold contract violated: {0}")]
    ContractViolation(String),

    /// A stream or record file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A stream or record file parsed but does not match the expected schema.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
