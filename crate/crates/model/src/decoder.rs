//! Cross-attention fusion of text and audio hidden sequences.
//!
//! The audio rows pass through a self-attention stack and are projected to the
//! text width; each cross layer then lets every text token attend over the audio.

use prosody_nn::{Graph, NodeId, Scalar, Tensor};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::layers::{prefix_mask, progress_encoding, Builder, CrossLayer, LayerNorm, Linear, TransformerLayer};

#[derive(Debug, Clone)]
pub struct FusionDecoder {
    pub audio_in: Option<Linear>,
    pub audio_layers: Vec<TransformerLayer>,
    pub audio_ln: LayerNorm,
    pub proj: Linear,
    pub cross: Vec<CrossLayer>,
    pub ln_out: LayerNorm,
    pub audio_dim: usize,
    pub text_dim: usize,
}

/// Fused hidden rows and the attention nodes of each cross layer.
#[derive(Debug, Clone)]
pub struct Fused {
    pub h: NodeId,
    pub cross_attention: Vec<NodeId>,
}

impl FusionDecoder {
    /// `audio_width` is the width of the encoder rows fed in.
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, config: &ModelConfig, audio_width: usize) -> Result<Self> {
        let (da, dt, eps) = (config.audio_dim, config.text_dim, config.ln_eps);
        let audio_in = if audio_width != da {
            Some(Linear::new(b, "decoder.audio_in", audio_width, da)?)
        } else {
            None
        };
        Ok(Self {
            audio_in,
            audio_layers: (0..config.decoder_audio_layers)
                .map(|i| {
                    TransformerLayer::new(
                        b,
                        &format!("decoder.audio{i}"),
                        da,
                        config.decoder_heads,
                        config.decoder_ff,
                        eps,
                    )
                })
                .collect::<Result<_>>()?,
            audio_ln: LayerNorm::new(b, "decoder.audio_ln", da, eps)?,
            proj: Linear::new(b, "decoder.proj", da, dt)?,
            cross: (0..config.decoder_cross_layers)
                .map(|i| {
                    CrossLayer::new(
                        b,
                        &format!("decoder.cross{i}"),
                        dt,
                        config.decoder_heads,
                        config.decoder_ff,
                        eps,
                    )
                })
                .collect::<Result<_>>()?,
            ln_out: LayerNorm::new(b, "decoder.ln_out", dt, eps)?,
            audio_dim: da,
            text_dim: dt,
        })
    }

    fn add_progress<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, valid: usize) -> Result<NodeId> {
        let (rows, cols) = (g.value(x).rows(), g.value(x).cols());
        let enc = progress_encoding(rows, valid, cols).into_iter().map(T::of).collect();
        let enc = g.input(Tensor::from_vec(&[rows, cols], enc)?);
        Ok(g.add(x, enc)?)
    }

    /// `H`, one row per text token. `text_valid` / `audio_valid` count unpadded rows.
    pub fn fuse<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        text: NodeId,
        text_valid: usize,
        audio: NodeId,
        audio_valid: usize,
    ) -> Result<Fused> {
        let mut a = match &self.audio_in {
            Some(l) => l.forward(g, audio)?,
            None => audio,
        };
        a = Self::add_progress(g, a, audio_valid)?;
        let mask = prefix_mask(g.value(a).rows(), audio_valid);
        for layer in &self.audio_layers {
            a = layer.forward(g, a, Some(&mask))?;
        }
        let a = self.audio_ln.forward(g, a)?;
        let memory = self.proj.forward(g, a)?;

        let mut h = Self::add_progress(g, text, text_valid)?;
        let mut cross_attention = Vec::with_capacity(self.cross.len());
        for layer in &self.cross {
            let (next, weights) = layer.forward(g, h, memory, Some(&mask))?;
            h = next;
            cross_attention.push(weights);
        }
        Ok(Fused {
            h: self.ln_out.forward(g, h)?,
            cross_attention,
        })
    }
}
