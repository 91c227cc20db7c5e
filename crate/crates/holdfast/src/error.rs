use thiserror::Error;

/// Errors produced by the holdfast library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("simulation diverged at t = {time:.4} s")]
    Diverged { time: f64 },
    #[error("grasp closed with no contacts")]
    NoContactGrasp,
    #[error("environment reset failed: {0}")]
    ResetFailure(String),
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
