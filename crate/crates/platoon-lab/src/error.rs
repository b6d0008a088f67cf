//! Error type shared across the crate.

use std::fmt;
use std::path::PathBuf;

/// Unified error for configuration, I/O, and runtime failures.
#[derive(Debug)]
pub enum Error {
    /// Configuration file could not be parsed.
    ConfigParse { path: PathBuf, detail: String },
    /// Configuration parsed but failed cross-field validation.
    ConfigInvalid(String),
    /// Filesystem operation failed.
    Io { path: PathBuf, source: std::io::Error },
    /// A checkpoint file was malformed or inconsistent.
    Checkpoint(String),
    /// An operation was invoked in an invalid state (API misuse).
    State(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code the CLI should use for this error.
    ///
    /// Configuration problems exit with 2, everything else with 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::ConfigInvalid(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ConfigParse { path, detail } => {
                write!(f, "failed to parse config {}: {}", path.display(), detail)
            }
            Error::ConfigInvalid(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {}: {}", path.display(), source),
            Error::Checkpoint(msg) => write!(f, "bad checkpoint: {msg}"),
            Error::State(msg) => write!(f, "invalid state: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
