//! The full boundary annotator: text encoder, optional audio encoder and fusion
//! decoder, and the label head.

use prosody_core::{BoundaryLabel, Utterance, NUM_LABELS};
use prosody_nn::{Graph, NodeId, ParameterStore, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioEncoder;
use crate::config::{AudioEncoderKind, ModelConfig};
use crate::decoder::{Fused, FusionDecoder};
use crate::error::{ModelError, Result};
use crate::layers::{Builder, Linear};
use crate::output::decode_labels;
use crate::text::TextEncoder;

/// Parameter-name prefix of everything inside the audio encoder.
pub const AUDIO_PREFIX: &str = "audio.";

/// One example as the model sees it. Rows past the `*_valid` counts are padding.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub tokens: &'a [u32],
    pub tokens_valid: usize,
    pub frames: &'a [Vec<f32>],
    pub frames_valid: usize,
}

impl<'a> From<&'a Utterance> for Example<'a> {
    fn from(u: &'a Utterance) -> Self {
        Self {
            tokens: &u.tokens,
            tokens_valid: u.tokens.len(),
            frames: &u.frames,
            frames_valid: u.frames.len(),
        }
    }
}

/// Intermediate nodes of a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub text: NodeId,
    pub audio: Option<NodeId>,
    pub fused: Option<Fused>,
    pub logits: NodeId,
}

#[derive(Debug, Clone)]
pub struct Annotator {
    pub config: ModelConfig,
    pub kind: AudioEncoderKind,
    pub audio: Option<AudioEncoder>,
    pub text: TextEncoder,
    pub decoder: Option<FusionDecoder>,
    pub head: Linear,
}

impl Annotator {
    /// Builds the model and a freshly initialized store; the same seed always
    /// yields the same values.
    pub fn build<T: Scalar>(config: &ModelConfig, kind: AudioEncoderKind, seed: u64) -> Result<(Self, ParameterStore<T>)> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let audio = match kind {
            AudioEncoderKind::None => None,
            k => Some(AudioEncoder::new(&mut b, config, k)?),
        };
        let text = TextEncoder::new(&mut b, config)?;
        let decoder = match &audio {
            Some(a) => Some(FusionDecoder::new(&mut b, config, a.output_width())?),
            None => None,
        };
        let head = Linear::new(&mut b, "head", config.text_dim, NUM_LABELS)?;
        Ok((
            Self {
                config: config.clone(),
                kind,
                audio,
                text,
                decoder,
                head,
            },
            store,
        ))
    }

    /// Records the forward pass up to the label logits (`N × 5`).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ex: Example<'_>) -> Result<Trace> {
        let text = self.text.encode(g, ex.tokens, ex.tokens_valid)?;
        let (audio, fused, top) = match (&self.audio, &self.decoder) {
            (Some(enc), Some(dec)) => {
                let frames = enc.frames_input(g, ex.frames)?;
                let a = enc.encode(g, frames, ex.frames_valid)?;
                let fused = dec.fuse(g, text, ex.tokens_valid, a.hidden, a.valid)?;
                let h = fused.h;
                (Some(a.hidden), Some(fused), h)
            }
            _ => (None, None, text),
        };
        let logits = self.head.forward(g, top)?;
        Ok(Trace {
            text,
            audio,
            fused,
            logits,
        })
    }

    /// Summed cross entropy over the valid tokens.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, ex: Example<'_>, labels: &[BoundaryLabel]) -> Result<NodeId> {
        if labels.len() != ex.tokens.len() {
            return Err(ModelError::Config(format!(
                "{} labels for {} tokens",
                labels.len(),
                ex.tokens.len()
            )));
        }
        let trace = self.forward(g, ex)?;
        let targets: Vec<Option<usize>> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (i < ex.tokens_valid).then_some(l.index()))
            .collect();
        Ok(g.cross_entropy(trace.logits, &targets)?)
    }

    /// Row-wise label probabilities, `N × 5` flattened.
    pub fn probabilities<T: Scalar>(&self, store: &ParameterStore<T>, ex: Example<'_>) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let trace = self.forward(&mut g, ex)?;
        let probs = g.softmax(trace.logits);
        Ok(g.value(probs).data().iter().map(|x| x.as_f64()).collect())
    }

    /// Most probable label per token; ties resolve to the weaker boundary.
    pub fn annotate<T: Scalar>(&self, store: &ParameterStore<T>, utt: &Utterance) -> Result<Vec<BoundaryLabel>> {
        let probs = self.probabilities(store, Example::from(utt))?;
        Ok(decode_labels(&probs))
    }
}
