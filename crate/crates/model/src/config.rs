use std::fmt;
use std::str::FromStr;

use prosody_core::CorpusHeader;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(ModelError::Config(format!("unknown preset `{other}` (desk, paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        })
    }
}

/// Which audio encoder feeds the fusion decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioEncoderKind {
    /// Text-only baseline.
    None,
    CnnChar,
    ConformerChar,
    Ppg,
}

impl AudioEncoderKind {
    pub const ALL: [AudioEncoderKind; 4] = [Self::None, Self::CnnChar, Self::ConformerChar, Self::Ppg];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::CnnChar => "cnn_char",
            Self::ConformerChar => "conformer_char",
            Self::Ppg => "ppg",
        }
    }

    /// Short model label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::None => "Text-only",
            Self::CnnChar => "CNN-char",
            Self::ConformerChar => "Conformer-char",
            Self::Ppg => "PPG",
        }
    }

    pub fn has_audio(self) -> bool {
        self != Self::None
    }
}

impl FromStr for AudioEncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown audio encoder `{s}` (none, cnn_char, conformer_char, ppg)")))
    }
}

impl fmt::Display for AudioEncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What the PPG encoder hands to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpgFeed {
    Posteriors,
    Hidden,
}

impl FromStr for PpgFeed {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posteriors" => Ok(Self::Posteriors),
            "hidden" => Ok(Self::Hidden),
            other => Err(ModelError::Config(format!("unknown ppg feed `{other}` (posteriors, hidden)"))),
        }
    }
}

impl fmt::Display for PpgFeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Posteriors => "posteriors",
            Self::Hidden => "hidden",
        })
    }
}

/// Sizes of every network component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Non-silence phones; posteriors have one extra silence class.
    pub phone_count: usize,
    pub feature_dim: usize,

    pub text_dim: usize,
    pub text_heads: usize,
    pub text_layers: usize,
    pub text_ff: usize,
    pub max_tokens: usize,

    pub audio_dim: usize,
    pub audio_heads: usize,
    pub conformer_blocks: usize,
    pub conv_kernel: usize,
    pub subsample: usize,
    pub audio_ff: usize,
    pub cnn_channels: usize,

    pub decoder_heads: usize,
    pub decoder_audio_layers: usize,
    pub decoder_cross_layers: usize,
    pub decoder_ff: usize,

    pub ppg_feed: PpgFeed,
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize, phone_count: usize, feature_dim: usize) -> Self {
        Self {
            vocab_size,
            phone_count,
            feature_dim,
            text_dim: 64,
            text_heads: 4,
            text_layers: 2,
            text_ff: 256,
            max_tokens: 256,
            audio_dim: 64,
            audio_heads: 4,
            conformer_blocks: 2,
            conv_kernel: 7,
            subsample: 2,
            audio_ff: 256,
            cnn_channels: 4,
            decoder_heads: 4,
            decoder_audio_layers: 2,
            decoder_cross_layers: 2,
            decoder_ff: 256,
            ppg_feed: PpgFeed::Posteriors,
            ln_eps: 1e-5,
        }
    }

    pub fn paper(vocab_size: usize, phone_count: usize, feature_dim: usize) -> Self {
        Self {
            text_dim: 768,
            text_heads: 12,
            text_layers: 12,
            text_ff: 3072,
            max_tokens: 512,
            audio_dim: 512,
            audio_heads: 8,
            conformer_blocks: 12,
            conv_kernel: 15,
            subsample: 4,
            audio_ff: 2048,
            cnn_channels: 32,
            decoder_heads: 8,
            decoder_audio_layers: 6,
            decoder_cross_layers: 6,
            decoder_ff: 2048,
            ..Self::desk(vocab_size, phone_count, feature_dim)
        }
    }

    pub fn preset(preset: Preset, header: &CorpusHeader) -> Self {
        let (v, p, f) = (
            header.vocab_size as usize,
            header.phone_count as usize,
            header.feature_dim as usize,
        );
        match preset {
            Preset::Desk => Self::desk(v, p, f),
            Preset::Paper => Self::paper(v, p, f),
        }
    }

    /// Posterior classes including silence.
    pub fn phone_classes(&self) -> usize {
        self.phone_count + 1
    }

    /// Character classes including the CTC blank at index 0.
    pub fn char_classes(&self) -> usize {
        self.vocab_size + 1
    }

    /// Frames after subsampling.
    pub fn subsampled_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.subsample)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("phone_count", self.phone_count),
            ("feature_dim", self.feature_dim),
            ("text_dim", self.text_dim),
            ("text_ff", self.text_ff),
            ("max_tokens", self.max_tokens),
            ("audio_dim", self.audio_dim),
            ("audio_ff", self.audio_ff),
            ("subsample", self.subsample),
            ("cnn_channels", self.cnn_channels),
            ("decoder_ff", self.decoder_ff),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("model.{name} must be positive")));
            }
        }
        for (name, dim, heads) in [
            ("text", self.text_dim, self.text_heads),
            ("audio", self.audio_dim, self.audio_heads),
            ("decoder text", self.text_dim, self.decoder_heads),
            ("decoder audio", self.audio_dim, self.decoder_heads),
        ] {
            if heads == 0 || dim % heads != 0 {
                return Err(ModelError::Config(format!("{name} width {dim} is not divisible by {heads} heads")));
            }
        }
        if self.conv_kernel % 2 == 0 {
            return Err(ModelError::Config(format!("model.conv_kernel must be odd, got {}", self.conv_kernel)));
        }
        if !(self.ln_eps > 0.0) {
            return Err(ModelError::Config("model.ln_eps must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::desk(60, 20, 16).validate().unwrap();
        ModelConfig::paper(60, 20, 16).validate().unwrap();
    }

    #[test]
    fn names_round_trip() {
        for k in AudioEncoderKind::ALL {
            assert_eq!(k.name().parse::<AudioEncoderKind>().unwrap(), k);
        }
        assert!("lstm".parse::<AudioEncoderKind>().is_err());
    }

    #[test]
    fn subsampled_length_rounds_up() {
        let c = ModelConfig::desk(10, 5, 4);
        assert_eq!(c.subsampled_len(7), 4);
        assert_eq!(c.subsampled_len(8), 4);
        assert_eq!(c.subsampled_len(1), 1);
    }

    #[test]
    fn odd_kernel_required() {
        let mut c = ModelConfig::desk(10, 5, 4);
        c.conv_kernel = 4;
        assert!(c.validate().is_err());
    }
}
