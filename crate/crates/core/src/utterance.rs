use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::label::{check_terminal, BoundaryLabel};

/// Half-open frame interval `[start, end)` holding one token's speech.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan(pub u32, pub u32);

impl TokenSpan {
    pub fn start(&self) -> usize {
        self.0 as usize
    }

    pub fn end(&self) -> usize {
        self.1 as usize
    }

    pub fn len(&self) -> usize {
        self.end().saturating_sub(self.start())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One `{speech, text, prosody}` triplet plus its frame alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<u32>,
    pub labels: Vec<BoundaryLabel>,
    /// `T` rows of `F` features.
    pub frames: Vec<Vec<f32>>,
    pub token_spans: Vec<TokenSpan>,
    /// Phone id per frame, 0 for silence.
    pub frame_phones: Vec<u32>,
}

impl Utterance {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Frames as one row-major `T × F` buffer.
    pub fn flat_frames(&self) -> Vec<f32> {
        self.frames.iter().flatten().copied().collect()
    }

    fn invalid(&self, message: impl Into<String>) -> CoreError {
        CoreError::Validation {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    /// Structural invariants that need no corpus-level context beyond the feature width.
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(self.invalid("no tokens"));
        }
        if self.labels.len() != n {
            return Err(self.invalid(format!("{} labels for {} tokens", self.labels.len(), n)));
        }
        if self.token_spans.len() != n {
            return Err(self.invalid(format!(
                "{} token spans for {} tokens",
                self.token_spans.len(),
                n
            )));
        }
        check_terminal(&self.labels).map_err(|e| self.invalid(e.to_string()))?;

        let t = self.frames.len();
        if let Some((i, row)) = self.frames.iter().enumerate().find(|(_, r)| r.len() != feature_dim) {
            return Err(self.invalid(format!(
                "frame {i} has {} features, expected {feature_dim}",
                row.len()
            )));
        }
        if self.frame_phones.len() != t {
            return Err(self.invalid(format!(
                "{} frame phones for {} frames",
                self.frame_phones.len(),
                t
            )));
        }

        let mut cursor = 0usize;
        for (i, span) in self.token_spans.iter().enumerate() {
            if span.start() < cursor || span.end() <= span.start() || span.end() > t {
                return Err(self.invalid(format!(
                    "token span {i} [{}, {}) is empty, overlapping or out of range",
                    span.0, span.1
                )));
            }
            if self.frame_phones[cursor..span.start()].iter().any(|&p| p != 0) {
                return Err(self.invalid(format!("non-silence phone outside spans before token {i}")));
            }
            cursor = span.end();
        }
        if self.frame_phones[cursor..].iter().any(|&p| p != 0) {
            return Err(self.invalid("non-silence phone after the last span"));
        }
        Ok(())
    }

    /// Checks every in-span frame carries the phone produced by its token.
    pub fn validate_phones(&self, phone_of: impl Fn(u32) -> u32) -> Result<()> {
        for (i, (span, &token)) in self.token_spans.iter().zip(&self.tokens).enumerate() {
            let phone = phone_of(token);
            if let Some(f) = (span.start()..span.end()).find(|&f| self.frame_phones[f] != phone) {
                return Err(self.invalid(format!(
                    "frame {f} in token {i}'s span has phone {}, expected {phone}",
                    self.frame_phones[f]
                )));
            }
        }
        Ok(())
    }
}
