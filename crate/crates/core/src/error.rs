//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (shape, range, finiteness).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of its allowed range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset could not be loaded or preprocessed.
    #[error("data error: {0}")]
    Data(String),

    /// Ragged or unparsable CSV row.
    #[error("data error at row {row}: {message}")]
    Row { row: usize, message: String },

    /// Numerical training failure.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// The black-box model refused or failed to produce predictions.
    #[error("predictor error: {0}")]
    Predictor(String),

    /// Transport or protocol failure talking to an external bridge process.
    #[error("bridge error: {message}")]
    Bridge {
        message: String,
        /// Raw line that triggered the failure, when one was received.
        raw: Option<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn bridge(msg: impl Into<String>, raw: Option<String>) -> Self {
        Error::Bridge {
            message: msg.into(),
            raw,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
