use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at layer {layer}: expected width {expected}, got {actual}")]
    LayerMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("objective diverged (non-finite value) at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("polar interpolation undefined: {0}")]
    DegenerateInterpolation(String),

    #[error(
        "smallest sigma {sigma} gave {hits} hits, below the floor of {floor}; start the grid lower"
    )]
    GridStartTooHigh { sigma: f64, hits: usize, floor: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

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
}
