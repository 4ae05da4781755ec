use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of a closed-form quantity.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is missing, unknown, or out of bounds.
    #[error("invalid config `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// A grid function holds NaN or infinite entries.
    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("blow-up detected at t = {t}")]
    BlowUp { t: f64 },

    #[error("linear solver did not converge at t = {t} after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        t: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("decay fit failed: {0}")]
    Fit(String),

    #[error("undefined ratio: {0}")]
    Undefined(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
