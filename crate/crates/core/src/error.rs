use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unknown dtype code `{0}`")]
    UnknownDtype(String),

    #[error("payload holds {found} bytes, header declares {expected}")]
    PayloadMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range for axis of extent {extent}")]
    OutOfRange { index: usize, extent: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("unknown tissue id {0}")]
    UnknownTissue(u16),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("solver diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
