use thiserror::Error;

/// Errors produced by the tensor, sampling and pipeline layers.
#[derive(Debug, Error)]
pub enum TprmError {
    /// Dimensions, block layouts or factor shapes that do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// An invalid hyperparameter, rank, iteration count or similar setting.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A non-finite value appeared where the math requires a finite one.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Malformed input data (bad magic bytes, non-binary responses, ...).
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TprmError>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::TprmError::Shape(format!($($arg)*)) };
}
macro_rules! param_err {
    ($($arg:tt)*) => { $crate::error::TprmError::Parameter(format!($($arg)*)) };
}
macro_rules! numeric_err {
    ($($arg:tt)*) => { $crate::error::TprmError::Numeric(format!($($arg)*)) };
}
macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::TprmError::Format(format!($($arg)*)) };
}

pub(crate) use {format_err, numeric_err, param_err, shape_err};
