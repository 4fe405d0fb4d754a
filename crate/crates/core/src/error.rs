use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or model parameter violates its invariant.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The limit family does not match the parent's domain of attraction.
    #[error("classification error: {0}")]
    Classification(String),

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature did not converge: estimated error {achieved:e} exceeds tolerance {requested:e}")]
    Numerical { achieved: f64, requested: f64 },

    /// Malformed input data, with its location when known.
    #[error("{}: {message}", location(.path, .line))]
    Data {
        path: Option<PathBuf>,
        line: Option<u64>,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn location(path: &Option<PathBuf>, line: &Option<u64>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("{}:{}", p.display(), l),
        (Some(p), None) => p.display().to_string(),
        (None, Some(l)) => format!("line {l}"),
        (None, None) => "input".to_string(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(message: impl Into<String>) -> Self {
        Error::Data {
            path: None,
            line: None,
            message: message.into(),
        }
    }
}
