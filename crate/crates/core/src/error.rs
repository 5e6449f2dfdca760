use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("record {image_id}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        image_id: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value for {0}")]
    NonFinite(String),

    #[error("duplicate image id {0}")]
    DuplicateId(String),

    #[error("image id {id} present in {present_in} but missing from {missing_from}")]
    MissingId {
        id: String,
        present_in: &'static str,
        missing_from: &'static str,
    },

    #[error("zero-norm vector for {0}")]
    ZeroNorm(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("unknown identity {0}")]
    UnknownIdentity(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

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

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
