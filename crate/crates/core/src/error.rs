use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation chain and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments, shapes or configuration values.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numerical routine could not produce a result (non-PD matrix,
    /// non-convergence, non-finite data).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than by the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Format { .. } | Error::Json(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
