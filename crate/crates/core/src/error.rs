use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("depth {depth} m is outside the timing window (0, {max}] m")]
    OutOfWindow { depth: f64, max: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("SBR is undefined for a frame with no counts")]
    UndefinedSbr,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing source data: {0}")]
    MissingSource(&'static str),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("checksum mismatch in record `{record}`")]
    Checksum { record: String },

    #[error("kind mismatch: {0}")]
    KindMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sample too small: {0}")]
    SampleTooSmall(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
