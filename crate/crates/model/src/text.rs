//! Token embeddings plus learned positions, refined by self-attention layers.

use prosody_nn::{Graph, Init, NodeId, ParamId, Scalar};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::layers::{prefix_mask, Builder, LayerNorm, TransformerLayer};

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub embed: ParamId,
    pub positions: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub ln_out: LayerNorm,
    pub vocab_size: usize,
    pub max_tokens: usize,
}

impl TextEncoder {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, config: &ModelConfig) -> Result<Self> {
        let d = config.text_dim;
        let embed = b.add("text.embed", &[config.vocab_size, d], Init::Normal(0.02))?;
        let positions = b.add("text.positions", &[config.max_tokens, d], Init::Normal(0.02))?;
        let layers = (0..config.text_layers)
            .map(|i| {
                TransformerLayer::new(
                    b,
                    &format!("text.layer{i}"),
                    d,
                    config.text_heads,
                    config.text_ff,
                    config.ln_eps,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embed,
            positions,
            layers,
            ln_out: LayerNorm::new(b, "text.ln_out", d, config.ln_eps)?,
            vocab_size: config.vocab_size,
            max_tokens: config.max_tokens,
        })
    }

    /// `X`, one row per token. Rows at `valid` and beyond are padding: they are
    /// excluded as attention keys and their outputs are meaningless.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: &[u32], valid: usize) -> Result<NodeId> {
        if tokens.is_empty() || valid == 0 {
            return Err(ModelError::Empty("token sequence"));
        }
        if tokens.len() > self.max_tokens {
            return Err(ModelError::TooLong {
                len: tokens.len(),
                max: self.max_tokens,
            });
        }
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                token,
                vocab_size: self.vocab_size,
            });
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let pos: Vec<usize> = (0..tokens.len()).collect();
        let (embed, positions) = (g.param(self.embed), g.param(self.positions));
        let e = g.embedding(embed, &ids)?;
        let p = g.embedding(positions, &pos)?;
        let mut x = g.add(e, p)?;
        let mask = prefix_mask(tokens.len(), valid.min(tokens.len()));
        for layer in &self.layers {
            x = layer.forward(g, x, Some(&mask))?;
        }
        self.ln_out.forward(g, x)
    }
}
