use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid boundary label value {0} (expected 0..=4)")]
    InvalidLabel(i64),

    #[error("malformed prosody tree: {0}")]
    MalformedTree(String),

    #[error("invalid label sequence: {0}")]
    InvalidLabelSequence(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("utterance `{id}` failed validation: {message}")]
    Validation { id: String, message: String },

    #[error("token id {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: u32 },

    #[error("invalid generator config: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("kappa undefined: {0}")]
    UndefinedKappa(String),

    #[error("annotation files misaligned: {0}")]
    Misaligned(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
