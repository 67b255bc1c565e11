use thiserror::Error;

#[derive(Debug, Error)]
pub enum FenepError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FenepError>;
