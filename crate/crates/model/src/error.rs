use prosody_core::CoreError;
use prosody_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("expected {expected} features per frame, got {got}")]
    FeatureDim { expected: usize, got: usize },

    #[error("sequence of {len} exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("target of {target_len} symbols needs {required} frames, only {frames} available")]
    InfeasibleTarget {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("CTC target symbol {symbol} outside 1..{classes}")]
    InvalidTarget { symbol: usize, classes: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("missing alignment: {0}")]
    MissingAlignment(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
