use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular system in {context}: {hint}")]
    Singular {
        context: &'static str,
        hint: String,
    },

    #[error("generalized eigenproblem failed: {reason} (dim {dim}, trace(S_w)={within_trace:e}, eps={eps:e}, min diag={min_diag:e})")]
    Eigen {
        reason: String,
        dim: usize,
        within_trace: f64,
        eps: f64,
        min_diag: f64,
    },

    #[error("objective became non-finite at outer iteration {iteration} (previous value {previous:e})")]
    NonFiniteObjective { iteration: usize, previous: f64 },

    #[error("query has no relevant database items")]
    NoRelevantItems,

    #[error("empty database")]
    EmptyDatabase,

    #[error("no query with at least one relevant database item")]
    NoValidQueries,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
