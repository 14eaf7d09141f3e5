mod common;

use common::{random_frames, tiny_config, toy_utterance};
use prosody_model::decoder::FusionDecoder;
use prosody_model::layers::Builder;
use prosody_model::{Annotator, AudioEncoderKind, Example, ModelConfig};
use prosody_nn::gradcheck::check_gradients;
use prosody_nn::{Graph, ParameterStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

struct Oracle<'a> {
    store: &'a ParameterStore<f64>,
}

impl Oracle<'_> {
    fn p(&self, name: &str) -> Vec<f64> {
        self.store.value(self.store.id(name).unwrap()).data().to_vec()
    }

    fn linear(&self, x: &Mat, name: &str) -> Mat {
        let (w, b) = (self.p(&format!("{name}.w")), self.p(&format!("{name}.b")));
        let out = b.len();
        x.iter()
            .map(|row| {
                (0..out)
                    .map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i * out + j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn layer_norm(&self, x: &Mat, name: &str) -> Mat {
        let (g, b) = (self.p(&format!("{name}.gamma")), self.p(&format!("{name}.beta")));
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                row.iter()
                    .enumerate()
                    .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i])
                    .collect()
            })
            .collect()
    }

    fn attention(&self, query: &Mat, memory: &Mat, name: &str) -> Mat {
        let q = self.linear(query, &format!("{name}.q"));
        let k = self.linear(memory, &format!("{name}.k"));
        let v = self.linear(memory, &format!("{name}.v"));
        let d = q[0].len() as f64;
        let mixed: Mat = q
            .iter()
            .map(|qi| {
                let s: Vec<f64> = k
                    .iter()
                    .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                    .collect();
                let z: f64 = s.iter().map(|x| x.exp()).sum();
                (0..v[0].len())
                    .map(|c| s.iter().zip(&v).map(|(sj, vj)| sj.exp() / z * vj[c]).sum())
                    .collect()
            })
            .collect();
        self.linear(&mixed, &format!("{name}.o"))
    }

    fn ffn(&self, x: &Mat, name: &str) -> Mat {
        let h: Mat = self
            .linear(x, &format!("{name}.up"))
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        self.linear(&h, &format!("{name}.down"))
    }
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn progress(rows: usize, d: usize) -> Mat {
    (0..rows)
        .map(|i| {
            let p = i as f64 / rows as f64;
            (0..d)
                .map(|j| {
                    let w = std::f64::consts::PI * 256f64.powf((j / 2) as f64 / (d / 2) as f64);
                    if j % 2 == 0 {
                        (p * w).sin()
                    } else {
                        (p * w).cos()
                    }
                })
                .collect()
        })
        .collect()
}

fn one_layer_config() -> ModelConfig {
    ModelConfig {
        text_dim: 4,
        audio_dim: 4,
        decoder_heads: 1,
        decoder_audio_layers: 1,
        decoder_cross_layers: 1,
        decoder_ff: 6,
        ..ModelConfig::desk(10, 3, 4)
    }
}

#[test]
fn fuse_matches_scalar_oracle() {
    let config = one_layer_config();
    let mut store = ParameterStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dec = FusionDecoder::new(&mut Builder::new(&mut store, &mut rng), &config, 4).unwrap();
    assert!(dec.audio_in.is_none());

    let x: Mat = vec![vec![0.1, -0.2, 0.3, 0.05], vec![-0.4, 0.2, 0.0, 0.25]];
    let o: Mat = vec![
        vec![0.3, 0.1, -0.1, 0.2],
        vec![-0.2, 0.4, 0.1, 0.0],
        vec![0.05, -0.3, 0.2, 0.1],
    ];
    let mut g = Graph::new(&store);
    let xn = g.input(Tensor::matrix(2, 4, &x.concat()).unwrap());
    let on = g.input(Tensor::matrix(3, 4, &o.concat()).unwrap());
    let fused = dec.fuse(&mut g, xn, 2, on, 3).unwrap();
    let got = g.value(fused.h).data().to_vec();

    let or = Oracle { store: &store };
    let mut a = add(&o, &progress(3, 4));
    let n = or.layer_norm(&a, "decoder.audio0.ln_attn");
    a = add(&a, &or.attention(&n, &n, "decoder.audio0.attn"));
    let n = or.layer_norm(&a, "decoder.audio0.ln_ff");
    a = add(&a, &or.ffn(&n, "decoder.audio0.ff"));
    let a = or.layer_norm(&a, "decoder.audio_ln");
    let memory = or.linear(&a, "decoder.proj");
    let mut h = add(&x, &progress(2, 4));
    let n = or.layer_norm(&h, "decoder.cross0.ln_attn");
    h = add(&h, &or.attention(&n, &memory, "decoder.cross0.attn"));
    let n = or.layer_norm(&h, "decoder.cross0.ln_ff");
    h = add(&h, &or.ffn(&n, "decoder.cross0.ff"));
    let want = or.layer_norm(&h, "decoder.ln_out").concat();

    assert_eq!(got.len(), 8);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn output_rows_follow_text_length() {
    let config = ModelConfig::desk(60, 20, 16);
    let (model, store) = Annotator::build::<f64>(&config, AudioEncoderKind::ConformerChar, 3).unwrap();
    let tokens = [4u32, 8, 15, 16, 23, 42];
    for t in [1usize, 2, 5, 40] {
        let frames = random_frames(t as u64, t, 16);
        let mut g = Graph::new(&store);
        let trace = model
            .forward(
                &mut g,
                Example {
                    tokens: &tokens,
                    tokens_valid: 6,
                    frames: &frames,
                    frames_valid: t,
                },
            )
            .unwrap();
        let fused = trace.fused.unwrap();
        assert_eq!(g.shape(fused.h), &[6, config.text_dim]);
        if t <= config.subsample {
            for &node in &fused.cross_attention {
                assert!(g.attention_weights(node).unwrap().iter().all(|&w| w == 1.0));
            }
        }
    }
}

#[test]
fn zero_head_predicts_uniform() {
    let config = tiny_config(6, 3, 4);
    let (model, mut store) = Annotator::build::<f64>(&config, AudioEncoderKind::CnnChar, 1).unwrap();
    for name in ["head.w", "head.b"] {
        let id = store.id(name).unwrap();
        store.get_mut(id).value.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let utt = toy_utterance(4, 5, 11, 4, 6);
    let p = model.probabilities(&store, Example::from(&utt)).unwrap();
    assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    let mut g = Graph::new(&store);
    let loss = model.loss(&mut g, Example::from(&utt), &utt.labels).unwrap();
    assert!((g.value(loss).data()[0] / 5.0 - 5f64.ln()).abs() < 1e-9);
}

#[test]
fn every_model_passes_finite_differences() {
    let config = tiny_config(6, 3, 4);
    for kind in AudioEncoderKind::ALL {
        for seed in 1..=3u64 {
            let (model, store) = Annotator::build::<f64>(&config, kind, seed).unwrap();
            let utt = toy_utterance(seed, 5, 11, 4, 6);
            let report = check_gradients(&store, 1e-5, |g| model.loss(g, Example::from(&utt), &utt.labels)).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{kind} seed {seed}: {} at {}",
                report.max_rel_error,
                report.worst
            );
        }
    }
}

#[test]
fn padding_leaves_probabilities_unchanged() {
    let config = tiny_config(6, 3, 4);
    for kind in AudioEncoderKind::ALL {
        let (model, store) = Annotator::build::<f64>(&config, kind, 2).unwrap();
        let utt = toy_utterance(8, 6, 13, 4, 6);
        let base = model.probabilities(&store, Example::from(&utt)).unwrap();

        let mut frames = utt.frames.clone();
        frames.extend(random_frames(77, 5, 4));
        let mut tokens = utt.tokens.clone();
        tokens.extend([1, 2, 3]);
        let padded = model
            .probabilities(
                &store,
                Example {
                    tokens: &tokens,
                    tokens_valid: utt.tokens.len(),
                    frames: &frames,
                    frames_valid: utt.frames.len(),
                },
            )
            .unwrap();
        for (a, b) in base.iter().zip(&padded[..base.len()]) {
            assert!((a - b).abs() < 1e-6, "{kind}: {a} vs {b}");
        }
    }
}

#[test]
fn annotation_is_deterministic_and_well_formed() {
    let config = tiny_config(6, 3, 4);
    let (model, store) = Annotator::build::<f32>(&config, AudioEncoderKind::Ppg, 6).unwrap();
    let utt = toy_utterance(1, 9, 20, 4, 6);
    let a = model.annotate(&store, &utt).unwrap();
    assert_eq!(a.len(), 9);
    assert_eq!(a, model.annotate(&store, &utt).unwrap());
}
