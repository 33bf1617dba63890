use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = IrsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IrsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("non-finite value at ({row},{col})")]
    NonFinite { row: usize, col: usize },

    #[error("payload truncated: expected {expected} values, found {found}")]
    PayloadTruncated { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label count mismatch: expected {expected}, found {found}")]
    LabelCount { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerically singular system (effective rank {rank} of {dim})")]
    Singular { rank: usize, dim: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("annotator failed: {0}")]
    Annotator(String),

    #[error("session error: {0}")]
    Session(String),
}

impl IrsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IrsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        IrsError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        IrsError::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        IrsError::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad input or unreadable files, as opposed to
    /// failures inside the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            IrsError::Io { .. }
                | IrsError::Json { .. }
                | IrsError::Format { .. }
                | IrsError::NonFinite { .. }
                | IrsError::PayloadTruncated { .. }
                | IrsError::DimensionMismatch(_)
                | IrsError::LabelCount { .. }
                | IrsError::InvalidArgument(_)
        )
    }
}
