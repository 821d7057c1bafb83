use thiserror::Error;

/// Failure of a CLI run, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input artifact. Exit code 1.
    #[error("validation error: {0}")]
    Validation(String),
    /// Numerical or I/O failure while running. Exit code 2.
    #[error("runtime failure: {0}")]
    Runtime(String),
    /// The run completed but at least one check failed. Exit code 3.
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    /// Validation error for the config key `key`.
    pub fn at(key: &str, err: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{key}: {err}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

impl From<flatdiv_core::Error> for CliError {
    fn from(e: flatdiv_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
