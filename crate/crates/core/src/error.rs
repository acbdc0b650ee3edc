use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("loss {0} has no gradient")]
    NotDifferentiable(&'static str),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("instance too large: {what} = {value} exceeds limit {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint: truncated payload ({0})")]
    Truncated(String),
    #[error("checkpoint: malformed ({0})")]
    Malformed(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Divergence { .. } => 3,
            Error::Io { .. }
            | Error::BadMagic(_)
            | Error::VersionMismatch { .. }
            | Error::Truncated(_)
            | Error::Malformed(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
