//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CtrError>;

#[derive(Debug, Error)]
pub enum CtrError {
    /// Incompatible matrix shapes, naming both operands.
    #[error("{op}: shape mismatch ({a_rows}x{a_cols} vs {b_rows}x{b_cols})")]
    Shape {
        op: &'static str,
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },

    /// Non-finite gradient or update hit a specific parameter.
    #[error("training error on parameter `{param}` at step {step}: {reason}")]
    Training {
        param: String,
        step: u64,
        reason: String,
    },

    /// The training loop observed a non-finite loss and stopped.
    #[error("non-finite loss in batch {batch}: {detail}")]
    TrainAbort { batch: usize, detail: String },

    /// API misuse (e.g. backward without a recorded forward pass).
    #[error("usage error: {0}")]
    Usage(String),

    /// Embedding lookup outside the table for a field.
    #[error("field {field}: index {index} out of bounds (table has {bound} rows)")]
    Lookup {
        field: usize,
        index: u32,
        bound: usize,
    },

    /// Too many malformed input lines, or an unreadable stream.
    #[error("ingestion error: {0}")]
    Ingest(String),

    /// Metric preconditions violated (single-class AUC, empty set).
    #[error("metric error: {0}")]
    Metric(String),

    /// Bad file contents: config, vocab, or checkpoint.
    #[error("parse error: {0}")]
    Parse(String),

    /// Bad argument values.
    #[error("argument error: {0}")]
    Arg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CtrError {
    /// CLI exit code: 2 for usage/input problems, 3 for runtime/numeric ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            CtrError::Usage(_)
            | CtrError::Ingest(_)
            | CtrError::Parse(_)
            | CtrError::Arg(_)
            | CtrError::Io(_) => 2,
            CtrError::Shape { .. }
            | CtrError::Training { .. }
            | CtrError::TrainAbort { .. }
            | CtrError::Lookup { .. }
            | CtrError::Metric(_) => 3,
        }
    }
}
