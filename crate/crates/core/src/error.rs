use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::KnowledgeKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate knowledge triple ({}, {}, {})", .0.domain, .0.entity_id, .0.doc_id)]
    DuplicateSnippet(KnowledgeKey),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("logs/labels misaligned: {logs} dialogues but {labels} labels")]
    Alignment { logs: usize, labels: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid mask: {0}")]
    Mask(String),

    #[error("input of {len} tokens cannot fit max_seq={max_seq} without cutting protected spans")]
    TooLong { len: usize, max_seq: usize },

    #[error("head `{0}` has not been trained")]
    NotTrained(String),

    #[error("non-finite loss at step {step} (batch examples {batch:?}): {loss}")]
    NonFiniteLoss {
        step: usize,
        batch: Vec<usize>,
        loss: f64,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,

    #[error("no candidates at the {level} level (under {parent})")]
    EmptyLevel { level: &'static str, parent: String },

    #[error("probability {0} outside [0, 1]")]
    ProbabilityScale(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dialogue {0} has no label")]
    Unlabeled(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing checkpoint for {subtask}: {path}")]
    MissingCheckpoint { subtask: &'static str, path: PathBuf },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
