use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown {kind} name `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("{what} id {id} out of range (size {size})")]
    Index {
        what: &'static str,
        id: usize,
        size: usize,
    },

    #[error("unsupported model kind {0} for this operation")]
    UnsupportedKind(crate::model::ModelKind),

    #[error("rule error: {0}")]
    Rule(String),

    #[error("conflicting rules: `{first}` and `{second}`")]
    RuleConflict { first: String, second: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot corrupt a triple with fewer than 2 entities")]
    TooFewEntities,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated checkpoint file {file}: expected {expected} bytes, found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },

    #[error("checksum mismatch for {file}: recorded {recorded}, computed {computed}")]
    Checksum {
        file: String,
        recorded: String,
        computed: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
