use sparsekit::{Error, ErrorClass};
use thiserror::Error as ThisError;

/// Failures of a CLI run, each mapped to a stable exit code.
#[derive(Debug, ThisError)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },

    #[error("strict mode: {0}")]
    Strict(String),

    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        CliError::Parse { source_name: source_name.to_string(), line, message: message.into() }
    }

    /// 2 config, 3 precondition, 4 numerical, 5 iteration budget, 6 io/parse, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Precondition => 3,
                ErrorClass::Numerical => 4,
                ErrorClass::IterationExhausted => 5,
            },
            CliError::Strict(_) => 4,
            CliError::Io { .. } | CliError::Parse { .. } => 6,
            CliError::Output(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
