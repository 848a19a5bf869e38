use std::collections::BTreeMap;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A cell could not be parsed. `row` is 1-based and counts data rows (header excluded).
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// A dataset or record invariant does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    /// A subsample needed by one of the models is empty or degenerate.
    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A value lies outside the domain an identification formula needs.
    #[error("domain error: {0}")]
    Domain(String),

    /// Too many bootstrap replicates failed.
    #[error("inference error: {succeeded}/{attempted} bootstrap replicates succeeded; failures: {failures:?}")]
    Inference {
        attempted: usize,
        succeeded: usize,
        failures: BTreeMap<String, usize>,
    },

    /// A data-generating configuration cannot satisfy its own constraints.
    #[error("infeasible data-generating process: {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short stable label used when tallying bootstrap failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::Estimation(_) => "estimation",
            Error::Numerical(_) => "numerical",
            Error::Domain(_) => "domain",
            Error::Inference { .. } => "inference",
            Error::Infeasible(_) => "infeasible",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
