use alloc::string::String;

use crate::backend::BackendError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's input contract.
    #[error("input contract violated: {0}")]
    Contract(String),
    /// Structured text failed to parse or did not match its schema.
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    /// An SSM invariant does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}
