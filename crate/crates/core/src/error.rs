use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, index range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numeric argument lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is malformed (non-finite values, empty sets, short signals).
    #[error("data error: {0}")]
    Data(String),

    /// A configuration value is invalid; `key` names the offending setting.
    #[error("configuration error ({key}): {msg}")]
    Config { key: String, msg: String },

    /// An ODE solve produced a non-finite state.
    #[error("solver diverged at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    #[error("training failure: {0}")]
    Training(String),

    /// A persisted artifact has the wrong magic, version or layout.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
