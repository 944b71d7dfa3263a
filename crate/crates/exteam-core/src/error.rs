//! Error taxonomy shared across the crate.
//!
//! Three categories matter operationally and map onto distinct CLI exit
//! codes: malformed inputs (`Config`), enumeration/parameter budgets
//! (`Budget`), and numerical breakdown inside a solver or estimator
//! (`NonFinite`).

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum TeamError {
    /// The problem description, policy document, or argument set is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// An enumeration or parameter-count budget would be exceeded.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// A non-finite value (or an importance weight past the overflow guard)
    /// appeared during evaluation or optimization.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Filesystem or serialization failure while reading/writing artifacts.
    #[error("io error: {0}")]
    Io(String),
}

impl TeamError {
    /// Process exit code for scripts: 2 config, 3 budget, 4 non-finite.
    /// I/O failures are reported as config-class errors (bad paths and
    /// unreadable documents are an input problem).
    #[must_use]
    pub fn exit_code(&self) -> i32 {
        match self {
            TeamError::Config(_) | TeamError::Io(_) => 2,
            TeamError::Budget(_) => 3,
            TeamError::NonFinite(_) => 4,
        }
    }
}

impl From<std::io::Error> for TeamError {
    fn from(e: std::io::Error) -> Self {
        TeamError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for TeamError {
    fn from(e: serde_json::Error) -> Self {
        TeamError::Config(format!("json: {e}"))
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, TeamError>;
