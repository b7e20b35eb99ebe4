use std::path::PathBuf;

use crate::date::YearMonth;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("validation failed for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("non-positive value {value} at index {index} under a log transform")]
    Domain { index: usize, value: f64 },

    #[error("unknown series `{0}`")]
    Lookup(String),

    #[error("insufficient history: {0}")]
    Length(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("missing vintage {0}")]
    MissingVintage(YearMonth),

    #[error("missing prerequisite artifact {path} (run `{stage}` first)")]
    MissingPrerequisite { path: PathBuf, stage: String },

    #[error("model fitted at tau={fitted} cannot predict tau={requested}")]
    TauMismatch { fitted: f64, requested: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(iteration: usize, message: impl Into<String>) -> Self {
        Error::Numerical {
            iteration,
            message: message.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            message: message.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
