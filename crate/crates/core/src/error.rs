use thiserror::Error;

/// Errors raised by the certification toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported space: {0}")]
    UnsupportedSpace(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("numerical error: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no certificate: {0}")]
    NoCertificate(String),

    #[error("unbounded fiber: {0}")]
    UnboundedFiber(String),

    #[error("scalarization failed at x = {x:?}: {reason}")]
    ScalarizationFailure { x: Vec<f64>, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            message: message.into(),
            residual,
        }
    }
}
