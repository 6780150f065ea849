//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by scale construction, training, evaluation, and model I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// The label column has fewer distinct values than the requested leaf or
    /// group count, so no strictly increasing quantile grid exists.
    #[error("insufficient label diversity: {distinct} distinct values, {required} required")]
    InsufficientLabelDiversity { distinct: usize, required: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// A confounder group received no training samples.
    #[error("empty confounder group {group}")]
    EmptyGroup { group: usize },

    /// All truth values are identical, so no pair carries ranking signal.
    #[error("no orderable pairs: all truth values are identical")]
    NoOrderablePairs,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// Dataset ingestion failure with row/column diagnostics.
    #[error("data error in {path} (row {row}, column {column}): {message}")]
    Data {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    /// Aggregated configuration problems, reported all at once.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
