use thiserror::Error;

/// Errors raised by models, oracles and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A computation would exceed a configured budget.
    #[error("resource limit in {module}: {what} needs {needed}, cap is {cap}")]
    Resource {
        module: &'static str,
        what: String,
        needed: u128,
        cap: u128,
    },

    /// A Markov chain fails the Doeblin condition with uniform reference measure.
    #[error("certification failed: {0}")]
    Certification(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn resource(
        module: &'static str,
        what: impl Into<String>,
        needed: u128,
        cap: u128,
    ) -> Self {
        Error::Resource {
            module,
            what: what.into(),
            needed,
            cap,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
