#![allow(dead_code)]

use prosody_core::synth::{generate_corpus, GenConfig, SplitCorpus};
use prosody_core::{BoundaryLabel, Utterance};
use prosody_model::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Narrow everything so finite-difference sweeps stay quick.
pub fn tiny_config(vocab: usize, phones: usize, features: usize) -> ModelConfig {
    ModelConfig {
        text_dim: 8,
        text_heads: 2,
        text_layers: 1,
        text_ff: 8,
        max_tokens: 32,
        audio_dim: 8,
        audio_heads: 2,
        conformer_blocks: 1,
        conv_kernel: 3,
        audio_ff: 8,
        cnn_channels: 2,
        decoder_heads: 2,
        decoder_audio_layers: 1,
        decoder_cross_layers: 1,
        decoder_ff: 8,
        ..ModelConfig::desk(vocab, phones, features)
    }
}

/// A short hand-made utterance with random frames.
pub fn toy_utterance(seed: u64, tokens: usize, frames: usize, features: usize, vocab: u32) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<BoundaryLabel> = (0..tokens)
        .map(|_| BoundaryLabel::ALL[rng.gen_range(0..5)])
        .collect();
    *labels.last_mut().unwrap() = BoundaryLabel::Iph;
    Utterance {
        id: format!("toy-{seed}"),
        tokens: (0..tokens).map(|_| rng.gen_range(0..vocab)).collect(),
        labels,
        frames: (0..frames)
            .map(|_| (0..features).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        token_spans: Vec::new(),
        frame_phones: Vec::new(),
    }
}

pub fn random_frames(seed: u64, n: usize, features: usize) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..features).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn corpus(n_train: usize, n_dev: usize, noise: f64, seed: u64) -> SplitCorpus {
    let config = GenConfig {
        n_train,
        n_dev,
        n_test: 0,
        noise_sigma: noise,
        seed,
        ..GenConfig::default()
    };
    generate_corpus(&config).unwrap()
}
