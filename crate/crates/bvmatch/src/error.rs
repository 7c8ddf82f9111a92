//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record in {path} at {location}: {message}")]
    Malformed {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("no valid points in {path}")]
    EmptyCloud { path: PathBuf },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty BV window")]
    EmptyBvWindow,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("patch has no valid pixels")]
    EmptyPatch,

    #[error("fewer than 2 matches")]
    TooFewMatches,

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("frame {0} is missing a pose")]
    MissingPose(String),

    #[error("not a {expected} file")]
    BadMagic { expected: &'static str },

    #[error("unsupported {format} version {found} (expected {expected})")]
    BadVersion {
        format: &'static str,
        found: u16,
        expected: u16,
    },

    #[error("truncated database at entry {entry}")]
    TruncatedDb { entry: usize },

    #[error("truncated {0} record")]
    Truncated(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
