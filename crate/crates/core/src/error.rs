use thiserror::Error;

/// Errors produced by the matching library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("factorization failed: non-positive pivot {value:e} at index {pivot}")]
    Factorization { pivot: usize, value: f64 },

    #[error("rollout diverged at step {step}: non-finite state")]
    Divergence { step: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn input(reason: impl Into<String>) -> Self {
        Error::InvalidInput(reason.into())
    }

    /// True for failures of the numerical machinery, as opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. } | Error::Divergence { .. } | Error::Numeric(_)
        )
    }
}
