//! Crate-wide error type.

/// Errors shared by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, bad dimensions, or an unsupported combination
    /// of options. Maps to exit code 2 in the CLI.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared where finite arithmetic was expected.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An operation was called out of order (e.g. backward without a
    /// preceding training-mode forward).
    #[error("state error: {0}")]
    State(String),

    /// Malformed dataset file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A metric that needs hidden ground-truth columns was asked of a
    /// dataset that does not carry them.
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    /// All transport mass fell on a single treatment arm.
    #[error("degenerate arm: {0}")]
    DegenerateArm(String),

    /// A stated precondition does not hold for the given input.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
