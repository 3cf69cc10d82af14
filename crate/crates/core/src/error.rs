use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no points")]
    NoPoints,

    #[error("unknown surface `{0}` (expected `smooth` or `crater-rim`)")]
    UnknownSurface(String),

    #[error("cannot select {requested} distinct centers, only {available} available")]
    CenterShortfall { requested: usize, available: usize },

    #[error(
        "ram budget too small for N = {n}: block side {block_size} needs {needed} bytes, budget is {budget}"
    )]
    RamBudgetTooSmall {
        n: usize,
        block_size: usize,
        needed: u128,
        budget: u64,
    },

    #[error("byte count overflows: {0}")]
    Overflow(String),

    #[error("design matrix of {entries} entries exceeds the naive assembly cap of {cap}")]
    NaiveCapExceeded { entries: usize, cap: usize },

    #[error(
        "normal system could not be factorized for any of {attempts} regularization levels \
         (largest tried {last_lambda:e}); {zero_coverage_centers} centers have no coverage"
    )]
    SolverExhausted {
        attempts: usize,
        last_lambda: f64,
        zero_coverage_centers: usize,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
