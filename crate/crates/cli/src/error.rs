//! Command-line error kinds and their exit codes.

use serde::Serialize;
use thiserror::Error;
use wavewarp::WarpError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent command-line arguments.
    #[error("{0}")]
    Usage(String),
    /// Input that cannot be read or cannot support the analysis.
    #[error("{0}")]
    Data(String),
    /// A numerical routine failed.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    /// Wraps an I/O failure on `path`.
    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<WarpError> for CliError {
    fn from(e: WarpError) -> Self {
        match e {
            WarpError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            WarpError::InsufficientData(_) => CliError::Data(e.to_string()),
            WarpError::Numerical(_) => CliError::Numeric(e.to_string()),
        }
    }
}

/// Machine-readable form written to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub error: &'a str,
    pub kind: &'static str,
    pub exit_code: i32,
}

impl<'a> ErrorReport<'a> {
    pub fn new(message: &'a str, kind: &'static str, exit_code: i32) -> Self {
        ErrorReport {
            tool: crate::TOOL,
            version: crate::VERSION,
            error: message,
            kind,
            exit_code,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(CliError::from(WarpError::InvalidArgument("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(WarpError::InsufficientData("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(WarpError::Numerical("x".into())).exit_code(), 4);
    }
}
