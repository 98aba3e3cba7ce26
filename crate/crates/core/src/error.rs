use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("duplicate conversation id `{id}` on lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("duplicate embedding key ({conversation_id}, {index}) on line {line}")]
    DuplicateKey {
        conversation_id: String,
        index: usize,
        line: usize,
    },

    #[error("no embedding for ({conversation_id}, {index})")]
    MissingEmbedding {
        conversation_id: String,
        index: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("split `{split}` is missing class {class}")]
    MissingClass { split: String, class: u8 },

    #[error("precision undefined: no predictions of class {class}")]
    UndefinedPrecision { class: u8 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("out-of-order utterance: expected index {expected}, got {actual}")]
    OutOfOrder { expected: usize, actual: usize },

    #[error("chunk belongs to conversation `{found}`, expected `{expected}`")]
    ForeignChunk { expected: String, found: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("classifier is not calibrated")]
    Uncalibrated,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
