use thiserror::Error;

/// Errors raised across the simulator, environment and training stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavqError {
    /// Out-of-range sizes, probabilities, indices or mismatched shapes.
    #[error("configuration error: {0}")]
    Config(String),
    /// A circuit plan that references a missing feature or parameter, or
    /// declares a parameter that no gate uses.
    #[error("layout error: {0}")]
    Layout(String),
    /// Caller-supplied data has the wrong length or is not finite.
    #[error("input error: {0}")]
    Input(String),
    /// Operation not allowed in the current state (e.g. stepping a finished episode).
    #[error("usage error: {0}")]
    Usage(String),
    /// Scene cannot be instantiated, typically because the goal is unreachable.
    #[error("scene error: {0}")]
    Scene(String),
    #[error("planning error: {0}")]
    Planning(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, NavqError>;

impl From<std::io::Error> for NavqError {
    fn from(e: std::io::Error) -> Self {
        NavqError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for NavqError {
    fn from(e: serde_json::Error) -> Self {
        NavqError::Io(e.to_string())
    }
}

impl From<csv::Error> for NavqError {
    fn from(e: csv::Error) -> Self {
        NavqError::Io(e.to_string())
    }
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NavqError::Config(msg.into()))
}
