use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("spatial dims {h}x{w} must be divisible by {multiple} for {context}")]
    Indivisible {
        h: usize,
        w: usize,
        multiple: usize,
        context: String,
    },

    #[error("training diverged: non-finite loss at iteration {iteration} (batch seed {batch_seed})")]
    NanLoss { iteration: usize, batch_seed: u64 },

    #[error("format error in {path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        message: String,
        offset: u64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("refusing to overwrite existing path {0} (pass --overwrite)")]
    WouldClobber(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
