use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty attention support")]
    EmptySupport,

    #[error("contrastive batch too small: n = {0}, need at least 2")]
    BatchTooSmall(usize),

    #[error("invalid target index {target} for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite gradient in parameter '{0}'")]
    NonFiniteGrad(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged {
        epoch: usize,
        msg: String,
        /// Parameters from the last epoch that finished with finite losses.
        last_good: Box<crate::checkpoint::Checkpoint>,
    },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
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

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Short stable tag used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::EmptySupport => "empty-support",
            Error::BatchTooSmall(_) => "batch-too-small",
            Error::InvalidTarget { .. } => "invalid-target",
            Error::NonScalarRoot(_) => "non-scalar-root",
            Error::NonFiniteGrad(_) => "non-finite-grad",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::EmptySplit(_) => "empty-split",
            Error::EmptyDataset => "empty-dataset",
            Error::Diverged { .. } => "diverged",
            Error::Config { .. } => "config",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}
