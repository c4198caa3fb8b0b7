//! Crate-wide error type with the exit-code contract used by the CLI.

use thiserror::Error;

/// Unified error for configuration, numerical, and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad hyperparameters, unknown tags, dimension
    /// mismatches, missing metadata. CLI exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// An iterate left the finite range (norm above the divergence guard or
    /// a non-finite coordinate). CLI exit code 3.
    #[error("diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// A verification suite failed. CLI exit code 4.
    #[error("verification failure: {0}")]
    Verification(String),

    /// File or serialization problem. CLI exit code 2.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization problem. CLI exit code 2.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand constructor for configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code under the CLI contract:
    /// 0 success, 2 config error, 3 divergence, 4 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Diverged { .. } => 3,
            Error::Verification(_) => 4,
        }
    }
}
