use thiserror::Error;

use crate::factor::ConvergenceTrace;

/// Errors produced by the factorization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite entry produced by the {factor} update")]
    NonFiniteUpdate { factor: &'static str },

    #[error("loss term for sample {sample} is not finite")]
    NonFiniteLoss { sample: usize },

    #[error("solver diverged at iteration {iteration}: {reason}")]
    Divergence {
        iteration: usize,
        reason: String,
        trace: Box<ConvergenceTrace>,
    },

    #[error("influence ratio undefined: {0}")]
    UndefinedInfluence(String),

    #[error("line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteUpdate { .. }
                | Error::NonFiniteLoss { .. }
                | Error::Divergence { .. }
                | Error::UndefinedInfluence(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
