//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by benchmark I/O, validation, and the BO loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty dataset: {0}")]
    EmptyData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("all configurations exhausted")]
    Exhausted,

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to numeric failures.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Domain(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
