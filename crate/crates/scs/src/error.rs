use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("duplicate or empty asset label: {0:?}")]
    BadLabel(String),

    #[error("panel needs at least {min} rows, got {got}")]
    TooFewRows { min: usize, got: usize },

    #[error("asset count {n} outside [1, {max}]")]
    BadAssetCount { n: usize, max: usize },

    #[error("nonpositive price at row {row}, column {col}")]
    NonPositivePrice { row: usize, col: usize },

    #[error("mask universes differ: {a} vs {b}")]
    UniverseMismatch { a: usize, b: usize },

    #[error("invalid selection mask: {0}")]
    BadMask(String),

    #[error("series length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss undefined: {0}")]
    LossUndefined(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("no feasible selection: {0}")]
    EmptyUniverse(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("full screening records required but not retained (universe too large)")]
    RecordsIncomplete,

    #[error("unknown asset label: {0}")]
    UnknownLabel(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 input error, 3 numerical
    /// degeneracy, 4 internal invariant violation.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Degenerate(_) | Error::LossUndefined(_) | Error::NotPositiveDefinite(_) => 3,
            Error::Internal(_) => 4,
            _ => 2,
        }
    }
}
