use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate entry: {0}")]
    Duplicate(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("query plan error: {0}")]
    Plan(String),

    #[error("fetch error: {0}")]
    Fetch(String),

    #[error("curation error: {0}")]
    Curation(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("balance error: {0}")]
    Balance(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("missing dependency: {0}")]
    Dependency(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(vec![message.into()])
    }

    /// Short machine-readable tag used in JSON error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Duplicate(_) => "duplicate",
            Error::NotFound(_) => "not_found",
            Error::Plan(_) => "plan",
            Error::Fetch(_) => "fetch",
            Error::Curation(_) => "curation",
            Error::Invariant(_) => "invariant",
            Error::Balance(_) => "balance",
            Error::Split(_) => "split",
            Error::Shape { .. } => "shape",
            Error::Numeric(_) => "numeric",
            Error::Training(_) => "training",
            Error::Evaluation(_) => "evaluation",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Dependency(_) => "dependency",
        }
    }
}
