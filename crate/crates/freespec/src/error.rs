use alloc::string::String;

/// Errors raised by the numerical kernels and algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("eigensolver did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("power series needs {required} terms but the cap is {cap}")]
    TruncationCap { required: u64, cap: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Dimension { .. } | Error::Invalid(_))
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::Error::Invalid(alloc::format!($($arg)*)) };
}
macro_rules! numeric {
    ($($arg:tt)*) => { $crate::Error::Numeric(alloc::format!($($arg)*)) };
}
pub(crate) use invalid;
pub(crate) use numeric;
