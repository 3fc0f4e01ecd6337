//! CLI error type carrying the process exit code.

use std::fmt;
use std::io;

pub type CliResult<T> = Result<T, CliError>;

/// Failure classes with fixed exit codes: configuration problems exit 2,
/// estimation non-convergence exits 3, file system trouble exits 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Convergence(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Convergence(msg) => write!(f, "convergence failure: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<qtomo_core::Error> for CliError {
    fn from(e: qtomo_core::Error) -> Self {
        match e {
            qtomo_core::Error::InvalidConfig(_)
            | qtomo_core::Error::DimensionMismatch { .. }
            | qtomo_core::Error::UnsupportedDimension(_) => CliError::Config(e.to_string()),
            _ => CliError::Convergence(e.to_string()),
        }
    }
}
