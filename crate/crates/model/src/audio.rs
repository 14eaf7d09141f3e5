//! Audio encoders: a conformer stack and a two-layer 2-D CNN, each producing
//! subsampled frame representations, plus the phone posterior head of the PPG
//! variant.

use prosody_nn::graph::Conv2dGeometry;
use prosody_nn::{Graph, Init, NodeId, ParamId, Scalar, Tensor};
use rand::Rng;

use crate::config::{AudioEncoderKind, ModelConfig, PpgFeed};
use crate::error::{ModelError, Result};
use crate::layers::{prefix_mask, Activation, Builder, FeedForward, LayerNorm, Linear, MultiHeadAttention};

/// Kernel and padding that map `T` frames to `ceil(T / s)` with stride `s`.
pub fn subsample_window(s: usize) -> (usize, usize) {
    (2 * (s / 2) + 1, s / 2)
}

#[derive(Debug, Clone)]
pub struct ConformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_conv: LayerNorm,
    pub pointwise_in: Linear,
    pub depthwise_w: ParamId,
    pub depthwise_b: ParamId,
    pub ln_depthwise: LayerNorm,
    pub pointwise_out: Linear,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
    pub dim: usize,
}

impl ConformerBlock {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, config: &ModelConfig) -> Result<Self> {
        let (d, k, eps) = (config.audio_dim, config.conv_kernel, config.ln_eps);
        Ok(Self {
            ln_attn: LayerNorm::new(b, &format!("{name}.ln_attn"), d, eps)?,
            attn: MultiHeadAttention::new(b, &format!("{name}.attn"), d, d, config.audio_heads)?,
            ln_conv: LayerNorm::new(b, &format!("{name}.ln_conv"), d, eps)?,
            pointwise_in: Linear::new(b, &format!("{name}.pw_in"), d, 2 * d)?,
            depthwise_w: b.add(&format!("{name}.dw.w"), &[k, d], Init::FanIn(k))?,
            depthwise_b: b.add(&format!("{name}.dw.b"), &[d], Init::FanIn(k))?,
            ln_depthwise: LayerNorm::new(b, &format!("{name}.ln_dw"), d, eps)?,
            pointwise_out: Linear::new(b, &format!("{name}.pw_out"), d, d)?,
            ln_ff: LayerNorm::new(b, &format!("{name}.ln_ff"), d, eps)?,
            ff: FeedForward::new(b, &format!("{name}.ff"), d, config.audio_ff, Activation::Swish)?,
            dim: d,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId, mask: &[bool], valid: usize) -> Result<NodeId> {
        let n = self.ln_attn.forward(g, x)?;
        let a = self.attn.forward(g, n, n, Some(mask))?;
        let x = g.add(x, a)?;

        let n = self.ln_conv.forward(g, x)?;
        let c = self.pointwise_in.forward(g, n)?;
        let value = g.slice_cols(c, 0, self.dim)?;
        let gate = g.slice_cols(c, self.dim, self.dim)?;
        let gate = g.sigmoid(gate);
        let glu = g.mul(value, gate)?;
        // Padding frames must look like the convolution's zero padding.
        let glu = g.mask_rows(glu, valid);
        let (w, b) = (g.param(self.depthwise_w), g.param(self.depthwise_b));
        let c = g.depthwise_conv1d(glu, w, b)?;
        let c = self.ln_depthwise.forward(g, c)?;
        let c = g.swish(c);
        let c = self.pointwise_out.forward(g, c)?;
        let x = g.add(x, c)?;

        let n = self.ln_ff.forward(g, x)?;
        let f = self.ff.forward(g, n)?;
        Ok(g.add(x, f)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conformer {
    pub subsample: Linear,
    pub blocks: Vec<ConformerBlock>,
    pub ln_out: LayerNorm,
    pub stride: usize,
}

impl Conformer {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, config: &ModelConfig) -> Result<Self> {
        let (kernel, _) = subsample_window(config.subsample);
        Ok(Self {
            subsample: Linear::new(b, "audio.subsample", kernel * config.feature_dim, config.audio_dim)?,
            blocks: (0..config.conformer_blocks)
                .map(|i| ConformerBlock::new(b, &format!("audio.block{i}"), config))
                .collect::<Result<_>>()?,
            ln_out: LayerNorm::new(b, "audio.ln_out", config.audio_dim, config.ln_eps)?,
            stride: config.subsample,
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: NodeId, valid: usize) -> Result<(NodeId, usize)> {
        let (kernel, pad) = subsample_window(self.stride);
        let x = g.mask_rows(frames, valid);
        let u = g.unfold1d(x, kernel, self.stride, pad)?;
        let mut x = self.subsample.forward(g, u)?;
        let rows = g.value(x).rows();
        let valid = valid.div_ceil(self.stride);
        let mask = prefix_mask(rows, valid);
        for block in &self.blocks {
            x = block.forward(g, x, &mask, valid)?;
        }
        Ok((self.ln_out.forward(g, x)?, valid))
    }
}

/// Two 3×3 convolutions over the (time, feature) plane; the first strides in time.
#[derive(Debug, Clone)]
pub struct CnnStack {
    pub conv1: Linear,
    pub conv2: Linear,
    pub channels: usize,
    pub features: usize,
    pub stride: usize,
}

impl CnnStack {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, config: &ModelConfig) -> Result<Self> {
        let c = config.cnn_channels;
        Ok(Self {
            conv1: Linear::new(b, "audio.conv1", 9, c)?,
            conv2: Linear::new(b, "audio.conv2", 9 * c, c)?,
            channels: c,
            features: config.feature_dim,
            stride: config.subsample,
        })
    }

    pub fn width(&self) -> usize {
        self.channels * self.features
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: NodeId, valid: usize) -> Result<(NodeId, usize)> {
        let t = g.value(frames).rows();
        let (kh, ph) = subsample_window(self.stride);
        let geom1 = Conv2dGeometry {
            h: t,
            w: self.features,
            c: 1,
            kh,
            kw: 3,
            sh: self.stride,
            sw: 1,
            ph,
            pw: 1,
        };
        let x = g.mask_rows(frames, valid);
        let cols = g.im2col(x, geom1)?;
        let y = self.conv1.forward(g, cols)?;
        let t2 = geom1.out_h();
        let y = g.reshape(y, &[t2, self.width()])?;
        let y = g.relu(y);
        let valid = valid.div_ceil(self.stride);
        let y = g.mask_rows(y, valid);

        let geom2 = Conv2dGeometry {
            h: t2,
            w: self.features,
            c: self.channels,
            kh: 3,
            kw: 3,
            sh: 1,
            sw: 1,
            ph: 1,
            pw: 1,
        };
        let cols = g.im2col(y, geom2)?;
        let z = self.conv2.forward(g, cols)?;
        let z = g.reshape(z, &[t2, self.width()])?;
        Ok((g.relu(z), valid))
    }
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Conformer(Conformer),
    Cnn(CnnStack),
}

/// Result of encoding one utterance's frames.
#[derive(Debug, Clone, Copy)]
pub struct AudioHidden {
    /// Rows handed to the decoder.
    pub hidden: NodeId,
    /// Output of the backbone (the layer below any classification head).
    pub backbone: NodeId,
    /// Phone logits of the PPG head.
    pub phone_logits: Option<NodeId>,
    /// Unpadded rows, `ceil(valid_frames / s)`.
    pub valid: usize,
}

#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub kind: AudioEncoderKind,
    pub backbone: Backbone,
    pub ppg_head: Option<Linear>,
    pub ppg_feed: PpgFeed,
    pub feature_dim: usize,
}

impl AudioEncoder {
    /// All parameters are named `audio.*`.
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, config: &ModelConfig, kind: AudioEncoderKind) -> Result<Self> {
        let (backbone, ppg_head) = match kind {
            AudioEncoderKind::None => {
                return Err(ModelError::Config("no audio encoder requested".into()));
            }
            AudioEncoderKind::CnnChar => (Backbone::Cnn(CnnStack::new(b, config)?), None),
            AudioEncoderKind::ConformerChar => (Backbone::Conformer(Conformer::new(b, config)?), None),
            AudioEncoderKind::Ppg => (
                Backbone::Conformer(Conformer::new(b, config)?),
                Some(Linear::new(b, "audio.ppg_head", config.audio_dim, config.phone_classes())?),
            ),
        };
        Ok(Self {
            kind,
            backbone,
            ppg_head,
            ppg_feed: config.ppg_feed,
            feature_dim: config.feature_dim,
        })
    }

    pub fn backbone_width(&self) -> usize {
        match &self.backbone {
            Backbone::Conformer(c) => c.subsample.out,
            Backbone::Cnn(c) => c.width(),
        }
    }

    /// Width of the rows handed to the decoder.
    pub fn output_width(&self) -> usize {
        match (&self.ppg_head, self.ppg_feed) {
            (Some(head), PpgFeed::Posteriors) => head.out,
            _ => self.backbone_width(),
        }
    }

    /// Loads `T × F` frames as a graph input, checking the feature width.
    pub fn frames_input<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &[Vec<f32>]) -> Result<NodeId> {
        if frames.is_empty() {
            return Err(ModelError::Empty("frame sequence"));
        }
        let f = self.feature_dim;
        if let Some(bad) = frames.iter().find(|r| r.len() != f) {
            return Err(ModelError::FeatureDim {
                expected: f,
                got: bad.len(),
            });
        }
        let data = frames.iter().flatten().map(|&x| T::of(x as f64)).collect();
        Ok(g.input(Tensor::from_vec(&[frames.len(), f], data)?))
    }

    /// Encodes frames; rows at `valid` and beyond are padding.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: NodeId, valid: usize) -> Result<AudioHidden> {
        if g.value(frames).cols() != self.feature_dim {
            return Err(ModelError::FeatureDim {
                expected: self.feature_dim,
                got: g.value(frames).cols(),
            });
        }
        if valid == 0 {
            return Err(ModelError::Empty("frame sequence"));
        }
        let (backbone, valid) = match &self.backbone {
            Backbone::Conformer(c) => c.forward(g, frames, valid)?,
            Backbone::Cnn(c) => c.forward(g, frames, valid)?,
        };
        let (hidden, phone_logits) = match &self.ppg_head {
            None => (backbone, None),
            Some(head) => {
                let logits = head.forward(g, backbone)?;
                let hidden = match self.ppg_feed {
                    PpgFeed::Posteriors => g.softmax(logits),
                    PpgFeed::Hidden => backbone,
                };
                (hidden, Some(logits))
            }
        };
        Ok(AudioHidden {
            hidden,
            backbone,
            phone_logits,
            valid,
        })
    }
}
