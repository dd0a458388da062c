use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's preconditions (shapes, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid scenario or model configuration.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Non-finite or otherwise unusable numbers.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// `Quu` could not be made positive definite; the caller should raise the
    /// regularization.
    #[error("Quu is not positive definite at step {step}")]
    NotPositiveDefinite { step: usize },

    /// The optimizer did not produce any feasible trajectory.
    #[error("solver failure: {0}")]
    Solver(String),

    /// The initial trajectory violates the raw constraints.
    #[error("infeasible initialization: constraint {constraint} violated at step {step} (g = {value:.3e})")]
    InfeasibleInit {
        step: usize,
        constraint: usize,
        value: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user-provided configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::InfeasibleInit { .. } | Error::Contract(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e))
    }
}
