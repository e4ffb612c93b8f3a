use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
///
/// Variants fall into two families: input errors (bad files, bad shapes,
/// bad configuration) and compute errors (non-finite values, degenerate
/// numerical systems). [`Error::is_input_error`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid class index {index} (model has {classes} classes)")]
    InvalidClass { index: usize, classes: usize },

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("bad magic in tensor file {0}")]
    BadMagic(PathBuf),

    #[error("truncated payload in {0}")]
    Truncated(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid hyperparameter for {method}: {message}")]
    Hyperparameter { method: String, message: String },

    #[error("method {0} is not implemented by this engine")]
    NotImplemented(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("every grid point failed for {method}: {message}")]
    AllGridPointsFailed { method: String, message: String },

    #[error("{stage} failed ({artifact}): {source}")]
    Stage {
        stage: &'static str,
        artifact: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    /// Wraps `self` with the pipeline stage and artifact it came from.
    pub fn in_stage(self, stage: &'static str, artifact: impl Into<String>) -> Self {
        Error::Stage { stage, artifact: artifact.into(), source: Box::new(self) }
    }

    /// True for problems with what the user supplied, false for failures
    /// that happen while computing.
    pub fn is_input_error(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_input_error();
        }
        !matches!(
            self,
            Error::NonFinite(_) | Error::Singular(_) | Error::AllGridPointsFailed { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
