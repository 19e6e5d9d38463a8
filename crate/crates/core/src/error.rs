use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A guard on problem size was exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Quadrature failed to reach its tolerance; `partial` is the best estimate seen.
    #[error("numeric failure: {message} (partial estimate {partial:e}, error {error:e})")]
    Numeric {
        message: String,
        partial: f64,
        error: f64,
    },

    /// A pathwise invariant that must hold exactly was broken.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Every problem found while validating an experiment configuration.
    #[error("invalid configuration: {}", format_issues(.0))]
    Validation(Vec<ConfigIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One failed check, located by a field path such as `betas[2]`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("`{}`: {}", i.path, i.message))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
