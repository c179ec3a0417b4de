//! Crate-wide error type.

use thiserror::Error;

use crate::ClassId;

/// Errors produced by any laboratory component.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class {0} overlaps an existing head")]
    ClassOverlap(ClassId),

    #[error("unknown class {0}")]
    UnknownClass(ClassId),

    #[error("label {0} is not covered by any head")]
    UncoveredLabel(ClassId),

    #[error("model has no heads")]
    NoHeads,

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("epoch {epoch} out of range (total {total})")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("row {row}: {msg}")]
    CsvParse { row: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("duplicate log entry: {0}")]
    DuplicateEntry(String),

    #[error("missing log entry: {0}")]
    MissingEntry(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
