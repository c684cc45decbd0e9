//! CLI error type with the exit-code contract: 2 validation, 3 numeric,
//! 4 I/O.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Malformed inputs: schema violations, bad flags, shape mismatches at
    /// load. Exit code 2.
    Validation(String),
    /// Numeric failure while executing a recipe. Exit code 3.
    Numeric(String),
    /// Filesystem failure. Exit code 4.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn validation(msg: impl Into<String>) -> CliError {
        CliError::Validation(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Core errors surfacing at run time are numeric failures (they already
/// carry layer/stage context); configuration errors raised before any
/// computation starts are validation failures.
impl From<quantlab_core::Error> for CliError {
    fn from(e: quantlab_core::Error) -> Self {
        match e {
            quantlab_core::Error::InvalidSpec(_) => CliError::Validation(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}
