use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation in {op}: {message}")]
    Contract { op: &'static str, message: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NnError {
    NnError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

pub(crate) fn contract(op: &'static str, message: impl Into<String>) -> NnError {
    NnError::Contract {
        op,
        message: message.into(),
    }
}
