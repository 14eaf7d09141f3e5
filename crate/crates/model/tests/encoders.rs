mod common;

use common::{random_frames, tiny_config};
use prosody_model::layers::Builder;
use prosody_model::{audio::AudioEncoder, text::TextEncoder, AudioEncoderKind, ModelConfig, ModelError};
use prosody_nn::{Graph, ParameterStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn text_encoder(config: &ModelConfig) -> (TextEncoder, ParameterStore<f64>) {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let enc = TextEncoder::new(&mut Builder::new(&mut store, &mut rng), config).unwrap();
    (enc, store)
}

fn audio_encoder(config: &ModelConfig, kind: AudioEncoderKind) -> (AudioEncoder, ParameterStore<f64>) {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let enc = AudioEncoder::new(&mut Builder::new(&mut store, &mut rng), config, kind).unwrap();
    (enc, store)
}

fn encode_text(enc: &TextEncoder, store: &ParameterStore<f64>, tokens: &[u32]) -> (Vec<usize>, Vec<f64>) {
    let mut g = Graph::new(store);
    let x = enc.encode(&mut g, tokens, tokens.len()).unwrap();
    (g.shape(x).to_vec(), g.value(x).data().to_vec())
}

/// Encoded rows (first `keep` of them), width and valid count.
fn encode_audio(
    enc: &AudioEncoder,
    store: &ParameterStore<f64>,
    frames: &[Vec<f32>],
    valid: usize,
) -> (Vec<f64>, usize, usize, usize) {
    let mut g = Graph::new(store);
    let f = enc.frames_input(&mut g, frames).unwrap();
    let a = enc.encode(&mut g, f, valid).unwrap();
    let v = g.value(a.hidden);
    (v.data().to_vec(), v.rows(), v.cols(), a.valid)
}

#[test]
fn text_shape_and_determinism() {
    let config = ModelConfig::desk(60, 20, 16);
    let (enc, store) = text_encoder(&config);
    for n in [1usize, 7, 30] {
        let tokens: Vec<u32> = (0..n as u32).map(|i| (i * 7) % 60).collect();
        let (shape, a) = encode_text(&enc, &store, &tokens);
        assert_eq!(shape, vec![n, config.text_dim]);
        let (_, b) = encode_text(&enc, &store, &tokens);
        assert_eq!(a, b);
    }
}

#[test]
fn text_sensitive_to_every_token() {
    let config = ModelConfig::desk(60, 20, 16);
    let (enc, store) = text_encoder(&config);
    let tokens = vec![3, 14, 15, 9, 26];
    let (_, base) = encode_text(&enc, &store, &tokens);
    for i in 0..tokens.len() {
        let mut other = tokens.clone();
        other[i] = (other[i] + 1) % 60;
        let (_, changed) = encode_text(&enc, &store, &other);
        let diff = base.iter().zip(&changed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-9, "token {i} had no effect");
    }
}

#[test]
fn text_rejects_out_of_range_tokens() {
    let config = ModelConfig::desk(10, 5, 4);
    let (enc, store) = text_encoder(&config);
    let mut g = Graph::new(&store);
    assert!(matches!(
        enc.encode(&mut g, &[1, 10], 2),
        Err(ModelError::TokenOutOfRange { token: 10, .. })
    ));
    assert!(matches!(enc.encode(&mut g, &[], 0), Err(ModelError::Empty(_))));
}

#[test]
fn ppg_rows_are_distributions() {
    let config = ModelConfig::desk(60, 20, 16);
    let (enc, store) = audio_encoder(&config, AudioEncoderKind::Ppg);
    for t in [1usize, 2, 9, 40] {
        let frames = random_frames(t as u64, t, 16);
        let (rows, n, width, valid) = encode_audio(&enc, &store, &frames, t);
        assert_eq!(width, config.phone_classes());
        assert_eq!(n, t.div_ceil(config.subsample));
        assert_eq!(valid, n);
        for row in rows.chunks(width) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn char_encoders_output_configured_width() {
    let config = ModelConfig::desk(60, 20, 16);
    for kind in [AudioEncoderKind::CnnChar, AudioEncoderKind::ConformerChar] {
        let (enc, store) = audio_encoder(&config, kind);
        let (_, n, width, _) = encode_audio(&enc, &store, &random_frames(1, 11, 16), 11);
        assert_eq!(width, config.audio_dim);
        assert_eq!(n, 6);
    }
}

#[test]
fn cnn_is_local_and_conformer_is_not() {
    let config = ModelConfig::desk(60, 20, 16);
    let frames = random_frames(3, 30, 16);
    let mut perturbed = frames.clone();
    // Row 0 sees frames up to 3; frame 20 is far outside.
    perturbed[20].iter_mut().for_each(|x| *x += 0.5);
    let width = config.audio_dim;

    let (cnn, store) = audio_encoder(&config, AudioEncoderKind::CnnChar);
    let (a, ..) = encode_audio(&cnn, &store, &frames, 30);
    let (b, ..) = encode_audio(&cnn, &store, &perturbed, 30);
    let row0 = |v: &[f64]| v[..width].to_vec();
    let max_diff = |x: Vec<f64>, y: Vec<f64>| x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(max_diff(row0(&a), row0(&b)) <= 1e-9);
    assert!(max_diff(a[10 * width..11 * width].to_vec(), b[10 * width..11 * width].to_vec()) > 1e-9);

    let (conf, store) = audio_encoder(&config, AudioEncoderKind::ConformerChar);
    let (a, ..) = encode_audio(&conf, &store, &frames, 30);
    let (b, ..) = encode_audio(&conf, &store, &perturbed, 30);
    assert!(max_diff(row0(&a), row0(&b)) > 1e-9);
}

#[test]
fn feature_width_is_checked() {
    let config = ModelConfig::desk(60, 20, 16);
    let (enc, store) = audio_encoder(&config, AudioEncoderKind::ConformerChar);
    let mut g = Graph::new(&store);
    assert!(matches!(
        enc.frames_input(&mut g, &random_frames(0, 4, 15)),
        Err(ModelError::FeatureDim { expected: 16, got: 15 })
    ));
}

#[test]
fn padded_frames_do_not_leak() {
    let config = tiny_config(12, 4, 4);
    for kind in [AudioEncoderKind::CnnChar, AudioEncoderKind::ConformerChar, AudioEncoderKind::Ppg] {
        let (enc, store) = audio_encoder(&config, kind);
        for valid in [5usize, 6, 9] {
            let frames = random_frames(valid as u64, valid, 4);
            let mut padded = frames.clone();
            padded.extend(random_frames(99, 4, 4));
            let (a, _, width, va) = encode_audio(&enc, &store, &frames, valid);
            let (b, _, _, vb) = encode_audio(&enc, &store, &padded, valid);
            assert_eq!(va, vb);
            for (x, y) in a.iter().zip(&b[..va * width]) {
                assert!((x - y).abs() < 1e-6, "{kind}: {x} vs {y}");
            }
        }
    }
}
