//! Audio-encoder pre-training on the train split: frame-level cross entropy
//! against phone or character alignments, or CTC against the token sequence.

use prosody_core::{Corpus, Utterance};
use prosody_nn::{adam_step, AdamConfig, Graph, NodeId, ParameterStore, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioEncoder, AudioHidden};
use crate::batch::{batch_gradients, map_items};
use crate::config::{AudioEncoderKind, ModelConfig};
use crate::ctc::{ctc_loss, greedy_decode};
use crate::error::{ModelError, Result};
use crate::layers::{Builder, Linear};
use crate::output::argmax_lowest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Per-frame phone classification (PPG).
    FramePhones,
    /// Per-frame character classification from token spans; silence is class 0.
    FrameChars,
    /// Alignment-free CTC over the token sequence.
    Ctc,
}

impl Objective {
    pub fn default_for(kind: AudioEncoderKind) -> Option<Self> {
        match kind {
            AudioEncoderKind::None => None,
            AudioEncoderKind::Ppg => Some(Self::FramePhones),
            AudioEncoderKind::CnnChar => Some(Self::FrameChars),
            AudioEncoderKind::ConformerChar => Some(Self::Ctc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr: 1e-3,
            seed: 1,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {} is not a finite non-negative number", self.lr)));
        }
        Ok(())
    }
}

/// An audio encoder with the classification head used only during pre-training.
#[derive(Debug, Clone)]
pub struct AudioPretrainer {
    pub config: ModelConfig,
    pub encoder: AudioEncoder,
    /// Character head (blank/silence = 0, token `t` = `t + 1`), absent for PPG.
    pub char_head: Option<Linear>,
    pub objective: Objective,
}

/// Per-frame phone targets at the encoder's output rate.
pub fn phone_targets(utt: &Utterance, subsample: usize) -> Result<Vec<usize>> {
    if utt.frame_phones.len() != utt.frames.len() {
        return Err(ModelError::MissingAlignment(format!(
            "{}: {} frame phones for {} frames",
            utt.id,
            utt.frame_phones.len(),
            utt.frames.len()
        )));
    }
    Ok(subsampled(&utt.frame_phones.iter().map(|&p| p as usize).collect::<Vec<_>>(), subsample))
}

/// Per-frame character targets at the encoder's output rate.
pub fn char_targets(utt: &Utterance, subsample: usize) -> Result<Vec<usize>> {
    if utt.token_spans.len() != utt.tokens.len() {
        return Err(ModelError::MissingAlignment(format!(
            "{}: {} token spans for {} tokens",
            utt.id,
            utt.token_spans.len(),
            utt.tokens.len()
        )));
    }
    let mut per_frame = vec![0usize; utt.frames.len()];
    for (span, &token) in utt.token_spans.iter().zip(&utt.tokens) {
        if span.end() > per_frame.len() {
            return Err(ModelError::MissingAlignment(format!("{}: span past the last frame", utt.id)));
        }
        per_frame[span.start()..span.end()].iter_mut().for_each(|c| *c = token as usize + 1);
    }
    Ok(subsampled(&per_frame, subsample))
}

/// Target of output row `o` is the frame at the window centre, `o·s`.
fn subsampled(per_frame: &[usize], s: usize) -> Vec<usize> {
    (0..per_frame.len().div_ceil(s)).map(|o| per_frame[o * s]).collect()
}

impl AudioPretrainer {
    pub fn build<T: Scalar>(
        config: &ModelConfig,
        kind: AudioEncoderKind,
        objective: Objective,
        seed: u64,
    ) -> Result<(Self, ParameterStore<T>)> {
        config.validate()?;
        let compatible = matches!(
            (kind, objective),
            (AudioEncoderKind::Ppg, Objective::FramePhones)
                | (AudioEncoderKind::CnnChar | AudioEncoderKind::ConformerChar, Objective::FrameChars | Objective::Ctc)
        );
        if !compatible {
            return Err(ModelError::Config(format!("{kind} cannot be pre-trained with {objective:?}")));
        }
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let encoder = AudioEncoder::new(&mut b, config, kind)?;
        let char_head = match objective {
            Objective::FramePhones => None,
            _ => Some(Linear::new(&mut b, "char_head", encoder.backbone_width(), config.char_classes())?),
        };
        Ok((
            Self {
                config: config.clone(),
                encoder,
                char_head,
                objective,
            },
            store,
        ))
    }

    fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, utt: &Utterance) -> Result<(AudioHidden, NodeId)> {
        let frames = self.encoder.frames_input(g, &utt.frames)?;
        let a = self.encoder.encode(g, frames, utt.frames.len())?;
        let logits = match (&self.char_head, a.phone_logits) {
            (Some(head), _) => head.forward(g, a.backbone)?,
            (None, Some(logits)) => logits,
            (None, None) => unreachable!("built without any head"),
        };
        Ok((a, logits))
    }

    /// Pre-training loss of one utterance, summed over frames.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, utt: &Utterance) -> Result<NodeId> {
        let s = self.config.subsample;
        let (_, logits) = self.encode(g, utt)?;
        match self.objective {
            Objective::FramePhones | Objective::FrameChars => {
                let targets = match self.objective {
                    Objective::FramePhones => phone_targets(utt, s)?,
                    _ => char_targets(utt, s)?,
                };
                let targets: Vec<Option<usize>> = targets.into_iter().map(Some).collect();
                Ok(g.cross_entropy(logits, &targets)?)
            }
            Objective::Ctc => {
                let v = g.value(logits);
                let (frames, classes) = (v.rows(), v.cols());
                let values: Vec<f64> = v.data().iter().map(|x| x.as_f64()).collect();
                let target: Vec<usize> = utt.tokens.iter().map(|&t| t as usize + 1).collect();
                let out = ctc_loss(&values, frames, classes, &target)?;
                let grad = out.grad.into_iter().map(T::of).collect();
                Ok(g.external_loss(T::of(out.loss), vec![(logits, grad)])?)
            }
        }
    }

    /// Head logits, `T' × classes` flattened.
    pub fn logits<T: Scalar>(&self, store: &ParameterStore<T>, utt: &Utterance) -> Result<(Vec<f64>, usize)> {
        let mut g = Graph::new(store);
        let (_, logits) = self.encode(&mut g, utt)?;
        let v = g.value(logits);
        Ok((v.data().iter().map(|x| x.as_f64()).collect(), v.cols()))
    }

    /// Row-normalized phone posteriors of the PPG encoder.
    pub fn phone_posteriors<T: Scalar>(&self, store: &ParameterStore<T>, utt: &Utterance) -> Result<Tensor<f64>> {
        let mut g = Graph::new(store);
        let frames = self.encoder.frames_input(&mut g, &utt.frames)?;
        let a = self.encoder.encode(&mut g, frames, utt.frames.len())?;
        let logits = a
            .phone_logits
            .ok_or_else(|| ModelError::Config("encoder has no phone head".into()))?;
        let p = g.softmax(logits);
        Ok(g.value(p).cast())
    }

    /// Fraction of output rows whose argmax matches the frame target.
    pub fn frame_accuracy(&self, store: &ParameterStore<f32>, corpus: &Corpus) -> Result<f64> {
        let s = self.config.subsample;
        let parts = map_items(&corpus.utterances, |utt| -> Result<(usize, usize)> {
            let targets = match self.objective {
                Objective::FramePhones => phone_targets(utt, s)?,
                _ => char_targets(utt, s)?,
            };
            let (logits, classes) = self.logits(store, utt)?;
            let hits = logits
                .chunks(classes)
                .zip(&targets)
                .filter(|(row, &t)| argmax_lowest(row) == t)
                .count();
            Ok((hits, targets.len()))
        });
        let (mut hits, mut total) = (0, 0);
        for p in parts {
            let (h, t) = p?;
            hits += h;
            total += t;
        }
        Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
    }

    /// Summed pre-training loss over a corpus, without updating anything.
    pub fn corpus_loss(&self, store: &ParameterStore<f32>, corpus: &Corpus) -> Result<f64> {
        let parts = map_items(&corpus.utterances, |utt| -> Result<f64> {
            let mut g = Graph::new(store);
            let loss = self.loss(&mut g, utt)?;
            Ok(g.value(loss).data()[0] as f64)
        });
        parts.into_iter().sum()
    }

    /// Greedy CTC transcript as token ids.
    pub fn transcribe(&self, store: &ParameterStore<f32>, utt: &Utterance) -> Result<Vec<u32>> {
        let (logits, classes) = self.logits(store, utt)?;
        Ok(greedy_decode(&logits, classes).into_iter().map(|c| c as u32 - 1).collect())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: AudioPretrainer,
    pub store: ParameterStore<f32>,
    /// Mean per-frame training loss of each epoch, accumulated during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// One pass over `items` in mini-batches, with an Adam step after each.
/// Returns the summed loss.
pub(crate) fn optimize_epoch<I, F>(
    store: &mut ParameterStore<f32>,
    items: &[I],
    batch_size: usize,
    adam: &AdamConfig,
    loss: F,
) -> Result<f64>
where
    I: Sync,
    F: Fn(&mut Graph<'_, f32>, &I) -> Result<NodeId> + Sync,
{
    let mut total = 0.0;
    for chunk in items.chunks(batch_size) {
        let (value, grads) = batch_gradients(store, chunk, &loss)?;
        store.zero_grad();
        store.accumulate(&grads)?;
        adam_step(store, adam)?;
        total += value;
    }
    Ok(total)
}

/// Deterministic per-epoch shuffle of `0..n`.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

pub fn pretrain(
    corpus: &Corpus,
    model_config: &ModelConfig,
    kind: AudioEncoderKind,
    objective: Objective,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(ModelError::Empty("pre-training corpus"));
    }
    let (model, mut store) = AudioPretrainer::build::<f32>(model_config, kind, objective, config.seed)?;
    let adam = AdamConfig::with_lr(config.lr);
    let frames: usize = corpus
        .utterances
        .iter()
        .map(|u| model_config.subsampled_len(u.frames.len()))
        .sum();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order: Vec<&Utterance> = epoch_order(corpus.len(), config.seed, epoch)
            .into_iter()
            .map(|i| &corpus.utterances[i])
            .collect();
        let total = optimize_epoch(&mut store, &order, config.batch_size, &adam, |g, u: &&Utterance| {
            model.loss(g, u)
        })?;
        epoch_losses.push(total / frames as f64);
    }
    Ok(PretrainOutcome {
        model,
        store,
        epoch_losses,
    })
}

/// Frame-level cross-entropy pre-training: phone targets for PPG, character
/// targets for the character encoders.
pub fn pretrain_frame_ce(
    corpus: &Corpus,
    model_config: &ModelConfig,
    kind: AudioEncoderKind,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    let objective = match kind {
        AudioEncoderKind::Ppg => Objective::FramePhones,
        AudioEncoderKind::None => return Err(ModelError::Config("no audio encoder to pre-train".into())),
        _ => Objective::FrameChars,
    };
    pretrain(corpus, model_config, kind, objective, config)
}

pub fn pretrain_ctc(corpus: &Corpus, model_config: &ModelConfig, config: &PretrainConfig) -> Result<PretrainOutcome> {
    pretrain(corpus, model_config, AudioEncoderKind::ConformerChar, Objective::Ctc, config)
}
