//! Crate-wide error type.

use crate::model::ValidationError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
