//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or extent mismatch; carries both offending shapes.
    #[error("dimension error: {context}: {lhs:?} vs {rhs:?}")]
    Dimension {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid configuration (bad key, divisibility violation, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// File or byte-stream decode failure.
    #[error("format error: {0}")]
    Format(String),

    /// Evaluation produced a non-finite value.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Input failed a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(context: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            context,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
