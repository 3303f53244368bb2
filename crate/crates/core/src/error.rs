use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index {index} out of range (max {max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("point {0} lies outside [0, 1]")]
    OutOfDomain(f64),

    #[error("coefficient vector of length {len} does not fit basis of size {max}")]
    LengthMismatch { len: usize, max: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("ill-conditioned Gram matrix (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
