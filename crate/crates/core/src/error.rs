use thiserror::Error;

/// Errors raised by the fitting library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpplError {
    /// `T - x` is below the evaluation guard at sample `index` (1-based).
    #[error("domain error at index {index}: T - x = {gap:e} is below the evaluation guard")]
    Domain { index: usize, gap: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid weight scheme: {0}")]
    InvalidWeights(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("invalid triple ({i}, {j}, {k}): {reason}")]
    InvalidTriple {
        i: usize,
        j: usize,
        k: usize,
        reason: String,
    },

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },

    #[error("io: {0}")]
    Io(String),

    #[error("all {count} fits failed: {}", details.join("; "))]
    AllFitsFailed { count: usize, details: Vec<String> },
}

impl From<std::io::Error> for LpplError {
    fn from(err: std::io::Error) -> Self {
        LpplError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LpplError>;
