use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("numeric error{}: {message}", .index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    Numeric {
        message: String,
        index: Option<usize>,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("step stalled at iteration {iteration}: {reason}")]
    Stall { iteration: usize, reason: String },

    #[error("parse error for key `{key}`: {message}")]
    Parse { key: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            index: None,
        }
    }

    pub(crate) fn numeric_at(message: impl Into<String>, index: usize) -> Self {
        Error::Numeric {
            message: message.into(),
            index: Some(index),
        }
    }

    pub(crate) fn parse(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Attach an iteration index to a numeric error that has none yet.
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::Numeric {
                message,
                index: None,
            } => Error::Numeric {
                message: format!("{message} (iteration {iteration})"),
                index: Some(iteration),
            },
            other => other,
        }
    }

    /// Process exit code used by the CLI: 2 for spec/config problems, 3 for
    /// numeric failures, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Unsupported(_) => 2,
            Error::Numeric { .. } | Error::Stall { .. } | Error::Domain(_) | Error::State(_) => 3,
            Error::Shape { .. } => 3,
            Error::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
