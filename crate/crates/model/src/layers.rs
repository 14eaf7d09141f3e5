//! Parameterized building blocks shared by the encoders and the decoder.
//!
//! Each block holds only [`ParamId`]s; values live in the store it was built
//! against (or a cast of it), so one block serves both `f32` and `f64` graphs.

use prosody_nn::{Graph, Init, NodeId, ParamId, ParameterStore, Scalar};
use rand::Rng;

use crate::error::Result;

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, T: Scalar, R: Rng> {
    pub store: &'a mut ParameterStore<T>,
    pub rng: &'a mut R,
}

impl<'a, T: Scalar, R: Rng> Builder<'a, T, R> {
    pub fn new(store: &'a mut ParameterStore<T>, rng: &'a mut R) -> Self {
        Self { store, rng }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        Ok(self.store.add(name, shape, init, self.rng)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, inp: usize, out: usize) -> Result<Self> {
        Ok(Self {
            w: b.add(&format!("{name}.w"), &[inp, out], Init::FanIn(inp))?,
            b: b.add(&format!("{name}.b"), &[out], Init::FanIn(inp))?,
            inp,
            out,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        Ok(g.linear(x, w, Some(b))?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar, R: Rng>(b: &mut Builder<'_, T, R>, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: b.add(&format!("{name}.gamma"), &[dim], Init::Constant(1.0))?,
            beta: b.add(&format!("{name}.beta"), &[dim], Init::Constant(0.0))?,
            eps,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        Ok(g.layer_norm(x, gamma, beta, self.eps)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        match self {
            Self::Relu => g.relu(x),
            Self::Swish => g.swish(x),
        }
    }
}

/// Two linear layers with an activation between them.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub act: Activation,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        dim: usize,
        hidden: usize,
        act: Activation,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(b, &format!("{name}.up"), dim, hidden)?,
            down: Linear::new(b, &format!("{name}.down"), hidden, dim)?,
            act,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        let h = self.up.forward(g, x)?;
        let h = self.act.apply(g, h);
        self.down.forward(g, h)
    }
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    /// Queries have width `dim`; keys and values are projected from `memory_dim`.
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        dim: usize,
        memory_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::new(b, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(b, &format!("{name}.k"), memory_dim, dim)?,
            v: Linear::new(b, &format!("{name}.v"), memory_dim, dim)?,
            o: Linear::new(b, &format!("{name}.o"), dim, dim)?,
            heads,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        query: NodeId,
        memory: NodeId,
        key_mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        Ok(self.forward_traced(g, query, memory, key_mask)?.0)
    }

    /// Also returns the raw attention node, whose weights can be read back with
    /// [`Graph::attention_weights`].
    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        query: NodeId,
        memory: NodeId,
        key_mask: Option<&[bool]>,
    ) -> Result<(NodeId, NodeId)> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let a = g.attention(q, k, v, self.heads, key_mask)?;
        Ok((self.o.forward(g, a)?, a))
    }
}

/// Pre-norm self-attention followed by a pre-norm feed-forward, each residual.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerLayer {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        dim: usize,
        heads: usize,
        ff: usize,
        eps: f64,
    ) -> Result<Self> {
        Ok(Self {
            ln_attn: LayerNorm::new(b, &format!("{name}.ln_attn"), dim, eps)?,
            attn: MultiHeadAttention::new(b, &format!("{name}.attn"), dim, dim, heads)?,
            ln_ff: LayerNorm::new(b, &format!("{name}.ln_ff"), dim, eps)?,
            ff: FeedForward::new(b, &format!("{name}.ff"), dim, ff, Activation::Relu)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let n = self.ln_attn.forward(g, x)?;
        let a = self.attn.forward(g, n, n, mask)?;
        let x = g.add(x, a)?;
        let n = self.ln_ff.forward(g, x)?;
        let f = self.ff.forward(g, n)?;
        Ok(g.add(x, f)?)
    }
}

/// Pre-norm cross-attention (queries from `h`, keys/values from `memory`)
/// followed by a pre-norm feed-forward, each residual.
#[derive(Debug, Clone)]
pub struct CrossLayer {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

impl CrossLayer {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        dim: usize,
        heads: usize,
        ff: usize,
        eps: f64,
    ) -> Result<Self> {
        Ok(Self {
            ln_attn: LayerNorm::new(b, &format!("{name}.ln_attn"), dim, eps)?,
            attn: MultiHeadAttention::new(b, &format!("{name}.attn"), dim, dim, heads)?,
            ln_ff: LayerNorm::new(b, &format!("{name}.ln_ff"), dim, eps)?,
            ff: FeedForward::new(b, &format!("{name}.ff"), dim, ff, Activation::Relu)?,
        })
    }

    /// Returns the layer output and its attention node.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h: NodeId,
        memory: NodeId,
        memory_mask: Option<&[bool]>,
    ) -> Result<(NodeId, NodeId)> {
        let n = self.ln_attn.forward(g, h)?;
        let (a, weights) = self.attn.forward_traced(g, n, memory, memory_mask)?;
        let h = g.add(h, a)?;
        let n = self.ln_ff.forward(g, h)?;
        let f = self.ff.forward(g, n)?;
        Ok((g.add(h, f)?, weights))
    }
}

/// Sinusoidal encoding of normalized position `i / valid` for each of `rows` rows.
pub fn progress_encoding(rows: usize, valid: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let denom = valid.max(1) as f64;
    let mut out = vec![0.0; rows * dim];
    for i in 0..rows {
        let p = i as f64 / denom;
        for k in 0..half {
            // Frequencies from π up to 256π cover sequences of a few hundred rows.
            let omega = std::f64::consts::PI * 256f64.powf(k as f64 / half.max(1) as f64);
            out[i * dim + 2 * k] = (p * omega).sin();
            out[i * dim + 2 * k + 1] = (p * omega).cos();
        }
    }
    out
}

/// `true` for the first `valid` of `len` positions.
pub fn prefix_mask(len: usize, valid: usize) -> Vec<bool> {
    (0..len).map(|i| i < valid).collect()
}
