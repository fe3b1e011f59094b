use thiserror::Error;

/// Everything that can go wrong across the crate, flattened into one enum so
/// callers (and the CLI exit-code mapping) can match on the failure class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    /// Arithmetic left the domain of a primitive: sqrt of a negative number,
    /// log of a non-positive number, division by zero, or a power that would
    /// produce NaN. Never silently returns NaN.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration aborted at t = {t}: {message}")]
    Integration { t: f64, message: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was invoked outside its stated precondition, e.g. a
    /// Hamiltonian morphism check on a pair that fails the bracket
    /// compatibility gate.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Two independent internal routes disagreed beyond tolerance.
    #[error("internal consistency check failed: {0}")]
    Inconsistency(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse { offset, message: message.into() }
    }

    pub fn model(message: impl Into<String>) -> Self {
        Error::Model(message.into())
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }
}
