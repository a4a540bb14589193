use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("{path}: bad magic, not a {expected} file")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },

    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("{path}: truncated payload")]
    TruncatedPayload { path: PathBuf },

    #[error(
        "{path}: byte-count mismatch: header expects {expected} values, payload holds {found}"
    )]
    ByteCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;
