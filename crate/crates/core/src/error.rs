use thiserror::Error;

pub type Result<T, E = BrbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BrbError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Requested work (step evaluations) exceeds the configured budget.
    #[error("budget exceeded: run needs {requested} step evaluations, budget is {budget}")]
    BudgetExceeded { requested: u64, budget: u64 },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed dataset file. `row` is 1-based and counts the header.
    #[error("schema error at row {row}, column `{column}`: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BrbError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        BrbError::InvalidArgument(msg.into())
    }
}
