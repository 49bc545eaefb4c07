use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("box center is directly above or below the sensor; bearing undefined")]
    DegenerateBearing,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("unknown split `{0}` (expected train, val, test or all)")]
    UnknownSplit(String),

    #[error("frame interval must be at least 1, got {0}")]
    InvalidInterval(usize),

    #[error("empty search area")]
    EmptySearchArea,

    #[error("memory is empty; initialize the tracker first")]
    EmptyMemory,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no displacement pairs to compute statistics from")]
    NoDisplacements,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
