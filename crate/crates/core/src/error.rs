use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, unknown or inconsistent. `key` names the offending entry.
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// An operation was called in the wrong lifecycle state (e.g. step before reset).
    #[error("state error: {0}")]
    State(String),

    /// The environment or fixture does not support the requested operation.
    #[error("capability error: {0}")]
    Capability(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
