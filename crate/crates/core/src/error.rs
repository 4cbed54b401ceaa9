use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Corpus ingestion failed (missing file, malformed line, dangling index).
    #[error("ingest error in {file}: {message}")]
    Ingest { file: String, message: String },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative routine did not converge.
    #[error("numeric failure: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    /// Invalid configuration (hyperparameters, folds, grid).
    #[error("configuration error: {0}")]
    Config(String),

    /// A metric is not defined for the given labels (e.g. single-class ROC-AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Requested graph construction cannot exist.
    #[error("infeasible construction: {0}")]
    Infeasible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn ingest(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ingest {
            file: file.into(),
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
