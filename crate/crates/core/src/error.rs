use alloc::string::String;
use core::fmt;

/// Errors shared by every module in the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is outside its documented domain.
    InvalidParameter(String),
    /// Input data violates a documented precondition (values, emptiness).
    InvalidInput(String),
    /// Tensor dimensions do not match what the operation requires.
    ShapeMismatch(String),
    /// A class index is outside `0..num_classes`.
    InvalidClass { class: usize, num_classes: usize },
    /// Total-variation gradient requested for an exponent `beta <= 1`.
    UnsupportedExponent(f64),
    /// Training diverged or could not produce a model.
    TrainingFailure(String),
    /// A model returned non-finite scores or an optimizer hit NaN.
    ModelFailure(String),
    /// A linear system was singular or a factorization broke down.
    NumericFailure(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidClass { class, num_classes } => {
                write!(f, "class {class} out of range for {num_classes} classes")
            }
            Error::UnsupportedExponent(beta) => {
                write!(f, "unsupported TV exponent beta = {beta} (need beta > 1)")
            }
            Error::TrainingFailure(msg) => write!(f, "training failure: {msg}"),
            Error::ModelFailure(msg) => write!(f, "model failure: {msg}"),
            Error::NumericFailure(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
