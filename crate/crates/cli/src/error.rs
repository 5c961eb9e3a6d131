use std::fmt::Display;

use thiserror::Error;

/// Command failure, split by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration: exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Anything that went wrong while running: exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn config(e: impl Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn runtime(e: impl Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<rerank_core::Error> for CliError {
    fn from(e: rerank_core::Error) -> Self {
        use rerank_core::Error::*;
        match e {
            Config(_) | UnknownBackend(_) | InvalidSplit(_) | InvalidPricing(_) | Template(_) => CliError::config(e),
            _ => CliError::runtime(e),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
