use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state corruption at {location}: {message}")]
    StateCorruption { location: String, message: String },

    #[error("validation failed with {count} violation(s): {summary}")]
    Validation { count: usize, summary: String },

    #[error("solver failure: {0}")]
    Solver(String),

    /// Something that should be impossible. Carries an LP dump of the
    /// offending model when one exists.
    #[error("internal error: {message}")]
    Internal { message: String, model_lp: Option<String> },

    #[error("instance too large: {size} assignments exceeds limit {limit}")]
    TooLarge { size: u128, limit: u128 },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}

pub(crate) fn corrupt<T>(location: impl Into<String>, msg: impl Into<String>) -> Result<T> {
    Err(Error::StateCorruption {
        location: location.into(),
        message: msg.into(),
    })
}
