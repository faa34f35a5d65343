use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures from the small dense linear algebra kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("matrix is not positive definite (pivot {pivot} is {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not symmetric (asymmetry {asymmetry:e} exceeds tolerance {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

impl NumericError {
    pub(crate) fn dims(expected: impl Into<String>, found: impl Into<String>) -> Self {
        NumericError::DimensionMismatch {
            expected: expected.into(),
            found: found.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("{context}: {source}")]
    NumericAt {
        context: String,
        source: NumericError,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("oracle noise policy requires mode indicators")]
    MissingModes,
    #[error("format version mismatch: expected {expected}, found {found}")]
    FormatVersionMismatch { expected: u32, found: u32 },
    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },
    #[error("checkpoint does not match network specification: {0}")]
    SpecMismatch(String),
    #[error("tape does not match the network it is replayed through: {0}")]
    TapeMismatch(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },
    #[error("dataset fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("ensemble is empty or too small: {0}")]
    EmptyEnsemble(String),
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numeric_at(context: impl Into<String>, source: NumericError) -> Self {
        Error::NumericAt {
            context: context.into(),
            source,
        }
    }
}
