use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input (shapes, ranges, empty sets).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("oracle regularization requires provenance tags for the traffic set")]
    MissingProvenance,

    #[error("frozen beta table has no entry for traffic sample {index} (table size {len})")]
    MissingBetaEntry { index: usize, len: usize },

    #[error("pool `{pool}` has {available} samples but {needed} are required")]
    InsufficientPool {
        pool: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("loss is not finite when perturbing parameter {parameter}")]
    NonFiniteGradCheck { parameter: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 3 for divergence, 1 for I/O, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
