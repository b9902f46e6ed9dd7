//! Crate-wide error type.
//!
//! Errors fall into three buckets that callers (in particular the CLI) treat
//! differently: configuration problems, data problems, and numerical
//! problems. IO failures are folded into the data bucket because from the
//! caller's point of view an unreadable file and a malformed file are the
//! same kind of failure.

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments: unknown keys, incompatible
    /// dimensions, out-of-range parameters.
    #[error("config error: {0}")]
    Config(String),

    /// Missing, unreadable, or malformed input data.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure: rank deficiency past the documented fallbacks,
    /// non-finite intermediates, solver divergence.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    ///
    /// 2 for configuration errors, 3 for data and IO errors, 4 for
    /// numerical errors. 0 is success and 1 is left to the runtime (panics).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numerical(_) => 4,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Prefixes the message with a location label (for example a window
    /// index and stage name), keeping the error's category.
    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
            Error::Io(e) => {
                Error::Io(std::io::Error::new(e.kind(), format!("{ctx}: {e}")))
            }
        }
    }
}
