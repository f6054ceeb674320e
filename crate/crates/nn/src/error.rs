use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("backward called without a matching recorded forward pass")]
    NoTape,
    #[error("non-finite gradient in parameter tensor {index}")]
    NonFiniteGrad { index: usize },
    #[error("invalid network description: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

impl NnError {
    pub fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        NnError::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
