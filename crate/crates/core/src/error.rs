//! Error type shared by every module.

use std::path::PathBuf;

/// Errors raised by the tagweave library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown tag(s): {}", .0.join("; "))]
    Vocabulary(Vec<String>),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("split infeasible: {0}")]
    SplitInfeasible(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("undefined confidence interval: {0}")]
    UndefinedCi(String),

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code, used by the CLI's `ERROR <code>:` prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Vocabulary(_) => "vocabulary",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::SplitInfeasible(_) => "split-infeasible",
            Error::Parameter(_) => "parameter",
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Divergence { .. } => "divergence",
            Error::Conflict(_) => "conflict",
            Error::UndefinedCi(_) => "undefined-ci",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
