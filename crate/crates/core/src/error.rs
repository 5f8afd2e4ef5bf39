use std::io;

use thiserror::Error;

/// Errors raised anywhere in the ranking toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dialog {id:?} has {turns} turns; at least 3 are required")]
    TooShort { id: String, turns: usize },

    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("embedding for token {token:?} has {found} components, expected {expected}")]
    EmbeddingDimension {
        token: String,
        expected: usize,
        found: usize,
    },

    #[error("token id {id} is out of range for a vocabulary of {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("forward cache does not match this model: {0}")]
    CacheMismatch(String),

    #[error("scoring candidate {index} failed: {source}")]
    Candidate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model was saved against a different vocabulary (checksum {expected:#018x}, found {found:#018x})")]
    ChecksumMismatch { expected: u64, found: u64 },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    /// True for failures caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Candidate { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            kind => Error::Parse {
                line,
                message: format!("{kind:?}"),
            },
        }
    }
}
