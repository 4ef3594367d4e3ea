//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or non-finite input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// Caller asked for something outside an operation's contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// Design admits no valid estimate (e.g. no treated units).
    #[error("degenerate design: {0}")]
    Degenerate(String),

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("enumeration of C({n},{n1}) = {count} assignments exceeds cap {cap}; use Monte Carlo instead")]
    Resource {
        n: usize,
        n1: usize,
        count: f64,
        cap: u64,
    },

    /// Numerical failure that should not happen for valid inputs.
    #[error("internal numerical error: {0}")]
    Numerical(String),

    /// Configuration failed validation; each entry is `(json_pointer, message)`.
    #[error("config validation failed:\n{}", format_violations(.0))]
    Config(Vec<(String, String)>),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[(String, String)]) -> String {
    v.iter()
        .map(|(ptr, msg)| format!("  {ptr}: {msg}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
