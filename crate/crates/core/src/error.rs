use std::path::PathBuf;

use thiserror::Error;

use crate::workload::RequestId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: line {line}: {reason}")]
    Trace {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("request {0} is already queued or running on this instance")]
    DuplicateRequest(RequestId),

    #[error("request {id} needs {needed} KV tokens but the instance holds only {capacity}")]
    Unschedulable {
        id: RequestId,
        needed: usize,
        capacity: usize,
    },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("exhaustive search over {n} requests refused: at most {max} are supported")]
    TooManyRequests { n: usize, max: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
