use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A corpus line does not match the JSON-lines schema.
    #[error("parse error at line {line} (sentence {id}): {message}")]
    Parse {
        line: usize,
        id: String,
        message: String,
    },

    /// The record parsed but breaks a corpus invariant.
    #[error("validation error in sentence {id}: {message}")]
    Validation { id: String, message: String },

    #[error("vocab error in sentence {id}: unknown {kind} label `{label}`")]
    Vocab {
        id: String,
        kind: &'static str,
        label: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index error: {what} {index} out of range (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("sentence of {len} sub-tokens exceeds encoder limit {limit}")]
    Length { len: usize, limit: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint fingerprint mismatch: {0}")]
    Fingerprint(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (sentences: {sentences})")]
    Divergence {
        epoch: usize,
        batch: usize,
        sentences: String,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
