use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration key is missing, unknown or holds an invalid value.
    #[error("invalid configuration for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A non-finite value appeared while evaluating a layer.
    #[error("non-finite value in {stage} at layer {layer}")]
    Numeric { stage: &'static str, layer: String },

    /// Training produced a non-finite task loss.
    #[error("non-finite loss for task {task} at step {step}")]
    NonFiniteLoss { step: usize, task: usize },

    /// A run violated one of its structural invariants.
    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("artifact error in {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Dimension { .. } => 2,
            Error::Numeric { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Integrity(_)
            | Error::Domain(_) => 3,
            Error::Artifact { .. } | Error::Io { .. } => 4,
        }
    }
}
