use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by ingestion, statistics and scanning.
#[derive(Debug, Error)]
pub enum DriftError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient rows: need {needed}, have {available}")]
    InsufficientRows { needed: usize, available: usize },

    /// A report applied to data it was not produced from.
    #[error("report does not match data: {0}")]
    ReportMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl DriftError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DriftError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by how the caller asked for something rather than
    /// by the data itself.
    pub fn is_usage(&self) -> bool {
        matches!(self, DriftError::InvalidConfig(_))
    }
}

pub type Result<T> = std::result::Result<T, DriftError>;
