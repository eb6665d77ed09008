use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty document")]
    EmptyDocument,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid document `{doc_id}`: {reason}")]
    InvalidDocument { doc_id: String, reason: String },

    #[error("invalid cluster set: {0}")]
    InvalidClusters(String),

    #[error("span out of range: ({start}, {end}) with {len} positions")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("sequence length {len} exceeds max_len {max}")]
    LengthOverflow { len: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint does not match configuration: {0}")]
    CheckpointMismatch(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },

    #[error("length mismatch: {left} hypotheses vs {right} references")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate gold: no coreference links in the key clustering")]
    DegenerateGold,

    #[error("empty validation set")]
    EmptyValidationSet,

    #[error("non-finite loss at step {step} (mt {mt_loss}, coref {coref_loss}); snapshot: {snapshot:?}")]
    NonFiniteLoss {
        step: usize,
        mt_loss: f64,
        coref_loss: f64,
        snapshot: Option<PathBuf>,
    },

    #[error("missing checkpoint for condition `{condition}` at {path}")]
    MissingCheckpoint { condition: String, path: PathBuf },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
}
