use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: column `{column}` not found")]
    MissingColumn { column: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value at row {row}, column `{column}` (features are never imputed)")]
    MissingFeature { row: usize, column: String },

    #[error("degenerate task `{task}`: {reason}")]
    DegenerateTask { task: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("line search failed at iteration {iteration}: no acceptable step after {doublings} doublings (gamma = {gamma:e}); last objectives {recent:?}")]
    LineSearch {
        iteration: usize,
        doublings: usize,
        gamma: f64,
        /// Tail of the objective trace before the failure.
        recent: Vec<f64>,
    },

    #[error("solver diverged at iteration {iteration}: objective is {value}; last objectives {recent:?}")]
    Divergence {
        iteration: usize,
        value: f64,
        recent: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("no model for task `{0}`")]
    MissingTaskModel(String),

    #[error("index {index} out of range for {what} of length {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
