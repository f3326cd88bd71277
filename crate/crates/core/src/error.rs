use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Series that must share a time grid do not.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Too few samples, empty inputs, and similar.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A value violates a type invariant (non-finite, out of range, ...).
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Malformed recording or chain file. `line` is 1-based.
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    /// Structural problems with a submission bundle or a report selection.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("task mismatch: {0} vs {1}")]
    TaskMismatch(u8, u8),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("appendix document: {0}")]
    Appendix(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
