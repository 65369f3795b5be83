//! Error taxonomy. `Config` maps to exit code 2 at the CLI, everything else
//! to exit code 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SscError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] tensor_nn::NnError),
}

pub type Result<T> = std::result::Result<T, SscError>;
