use thiserror::Error;

/// Errors raised by the solvers, bound calculators and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible set: {0}")]
    InfeasibleSet(String),

    #[error("unsupported set: {0}")]
    UnsupportedSet(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical divergence at iteration {k}: {detail}")]
    NumericalDivergence { k: usize, detail: String },

    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    #[cfg_attr(not(feature = "cli"), allow(dead_code))]
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
