use thiserror::Error;

/// Errors produced by the engine, attacks, data loaders and trainers.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatches, inconsistent layer chains, invalid hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs outside an operation's documented domain (bad label, negative
    /// weight, kappa above the step budget, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed binary files. `offset` is the byte position where the
    /// problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
