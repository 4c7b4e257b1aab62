use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {table}: expected {expected} entries, found {found}")]
    Dimension {
        table: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error(
        "LP iteration cap of {iterations} pivots exceeded (best objective so far {best_bound})"
    )]
    IterationCap { iterations: usize, best_bound: f64 },

    #[error("LP numerical failure: {0}")]
    Numerical(String),

    #[error("tightened LP is infeasible at epsilon {0}")]
    Infeasible(f64),

    #[error("enumeration guard exceeded: {policies} deterministic policies (limit {limit})")]
    EnumerationGuard { policies: f64, limit: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
