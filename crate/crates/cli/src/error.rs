use fenep_core::FenepError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("audit: {0}")]
    Audit(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Mesh(_) => 3,
            Self::Solver(_) | Self::Io(_) => 4,
            Self::Audit(_) => 5,
        }
    }

    /// Errors raised while setting up a run: bad parameters are config errors.
    pub fn setup(e: FenepError) -> Self {
        match e {
            FenepError::Mesh(m) => Self::Mesh(m),
            FenepError::Parse { line, msg } => Self::Mesh(format!("line {line}: {msg}")),
            FenepError::Io(e) => Self::Io(e),
            other => Self::Config(other.to_string()),
        }
    }

    /// Errors raised inside the time loop.
    pub fn solve(e: FenepError) -> Self {
        match e {
            FenepError::Io(e) => Self::Io(e),
            other => Self::Solver(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(std::io::Error::other(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
