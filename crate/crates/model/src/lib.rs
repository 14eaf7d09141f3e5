//! Neural prosodic boundary annotation from text and speech features.
//!
//! A text encoder embeds the token sequence; an optional audio encoder (a
//! conformer, a small 2-D CNN, or a conformer with a phone-posterior head)
//! embeds the frames; a fusion decoder lets each token attend over the audio
//! and a linear head predicts one of five boundary levels per token.

pub mod annotator;
pub mod audio;
pub mod batch;
pub mod config;
pub mod ctc;
pub mod decoder;
pub mod error;
pub mod layers;
pub mod output;
pub mod pretrain;
pub mod text;
pub mod train;

pub use annotator::{Annotator, Example, AUDIO_PREFIX};
pub use config::{AudioEncoderKind, ModelConfig, PpgFeed, Preset};
pub use error::{ModelError, Result};
pub use pretrain::{pretrain, pretrain_ctc, pretrain_frame_ce, AudioPretrainer, Objective, PretrainConfig, PretrainOutcome};
pub use train::{evaluate, run_ablation, train, SplitEval, TrainConfig, TrainOutcome};
