use prosody_core::synth::{
    generate_corpus, generate_utterance, sample_prosody, sample_text_and_prosody, CountRange, GenConfig,
    PhoneTemplates, Split,
};
use prosody_core::BoundaryLabel::{self, *};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Expected label frequencies from the children-count means, when every count
/// is drawn independently (true for `p_ambig = 1`).
fn analytic_frequencies(config: &GenConfig) -> [f64; 5] {
    let r = config.iph_per_utterance.mean();
    let a = config.pph_per_iph.mean();
    let b = config.pw_per_pph.mean();
    let c = config.lw_per_pw.mean();
    // Characters per lexicon word are `min + token mod span` with tokens uniform over the vocabulary.
    let span = config.chars_per_lw.span();
    let d = (0..config.vocab_size)
        .map(|t| (config.chars_per_lw.min + t % span) as f64)
        .sum::<f64>()
        / config.vocab_size as f64;
    let iph = r;
    let pph = r * a;
    let pw = pph * b;
    let lw = pw * c;
    let n = lw * d;
    [(n - lw) / n, (lw - pw) / n, (pw - pph) / n, (pph - iph) / n, iph / n]
}

#[test]
fn label_marginals_match_grammar_expectation() {
    let config = GenConfig {
        p_ambig: 1.0,
        ..GenConfig::default()
    };
    let expected = analytic_frequencies(&config);
    let mut counts = [0u64; 5];
    let mut total = 0u64;
    for i in 0..10_000u64 {
        let mut token_rng = ChaCha8Rng::seed_from_u64(i);
        let mut prosody_rng = ChaCha8Rng::seed_from_u64(i + 1_000_000);
        let (_, labels) = sample_text_and_prosody(&config, &mut token_rng, &mut prosody_rng);
        for l in labels {
            counts[l.index()] += 1;
            total += 1;
        }
    }
    for level in 0..5 {
        let observed = counts[level] as f64 / total as f64;
        assert!(
            (observed - expected[level]).abs() <= 0.02,
            "level {level}: observed {observed:.4}, expected {:.4}",
            expected[level]
        );
    }
}

#[test]
fn two_equiprobable_groupings() {
    // Only the lexicon-word count of the single prosodic word is random.
    let config = GenConfig {
        iph_per_utterance: CountRange::new(1, 1),
        pph_per_iph: CountRange::new(1, 1),
        pw_per_pph: CountRange::new(1, 1),
        lw_per_pw: CountRange::new(1, 2),
        chars_per_lw: CountRange::new(1, 1),
        p_ambig: 1.0,
        ..GenConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut split = 0;
    let trials = 10_000;
    for _ in 0..trials {
        let labels = sample_prosody(&[0, 1], &config, &mut rng).unwrap();
        match labels.as_slice() {
            [Lw, Iph] => split += 1,
            [Iph, Iph] => {}
            other => panic!("unexpected grouping {other:?}"),
        }
    }
    let freq = split as f64 / trials as f64;
    assert!((0.48..=0.52).contains(&freq), "frequency {freq}");
}

#[test]
fn conflicting_prosody_grows_with_ambiguity() {
    let base = GenConfig::default();
    let texts: Vec<Vec<u32>> = (0..400u64)
        .map(|i| {
            sample_text_and_prosody(
                &base,
                &mut ChaCha8Rng::seed_from_u64(i),
                &mut ChaCha8Rng::seed_from_u64(i + 7),
            )
            .0
        })
        .collect();
    let rates: Vec<f64> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&p| {
            let config = GenConfig { p_ambig: p, ..base.clone() };
            let conflicts = texts
                .iter()
                .enumerate()
                .filter(|(i, tokens)| {
                    let a = sample_prosody(tokens, &config, &mut ChaCha8Rng::seed_from_u64(*i as u64)).unwrap();
                    let b = sample_prosody(tokens, &config, &mut ChaCha8Rng::seed_from_u64(*i as u64 + 99_999))
                        .unwrap();
                    a != b
                })
                .count();
            conflicts as f64 / texts.len() as f64
        })
        .collect();
    assert_eq!(rates[0], 0.0);
    assert!(rates[0] < rates[1] && rates[1] < rates[2], "rates {rates:?}");
}

#[test]
fn lengthening_shows_in_mean_durations() {
    let config = GenConfig::default();
    let templates = PhoneTemplates::new(&config);
    let (mut long_sum, mut long_n, mut short_sum, mut short_n) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..1000 {
        let utt = generate_utterance(&config, &templates, Split::Train, i);
        for (span, &label) in utt.token_spans.iter().zip(&utt.labels) {
            if label >= Pw {
                long_sum += span.len();
                long_n += 1;
            } else {
                short_sum += span.len();
                short_n += 1;
            }
        }
    }
    let gap = long_sum as f64 / long_n as f64 - short_sum as f64 / short_n as f64;
    assert!((gap - config.lengthening as f64).abs() <= 0.2, "gap {gap}");
}

/// Reads boundaries back from noise-free frames alone: tokens are runs of
/// identical frames, pause lengths give phrase levels, run length gives lengthening.
fn decode_noise_free(frames: &[Vec<f32>], silence: &[f32], config: &GenConfig) -> Vec<(bool, BoundaryLabel)> {
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let is_silence = frame.as_slice() == silence;
        let continues = i > 0 && frames[i - 1] == *frame;
        match runs.last_mut() {
            Some(last) if continues => last.1 += 1,
            _ => runs.push((is_silence, 1)),
        }
    }
    let mut decoded = Vec::new();
    for (k, &(is_silence, len)) in runs.iter().enumerate() {
        if is_silence {
            continue;
        }
        let lengthened = len as u32 >= config.base_duration + config.lengthening - config.duration_jitter;
        let pause = match runs.get(k + 1) {
            Some(&(true, n)) => n as u32,
            _ => 0,
        };
        let phrase = if pause == config.pause_iph {
            Iph
        } else if pause == config.pause_pph {
            Pph
        } else {
            Cc
        };
        decoded.push((lengthened, phrase));
    }
    decoded
}

#[test]
fn noise_free_audio_determines_phrase_boundaries() {
    let config = GenConfig {
        noise_sigma: 0.0,
        n_train: 300,
        n_dev: 0,
        n_test: 0,
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&config).unwrap().train;
    let templates = PhoneTemplates::new(&config);
    for utt in &corpus.utterances {
        // Silence frames carry the speaker's silence template; find it from the alignment.
        let silence_frame = utt.frame_phones.iter().position(|&p| p == 0).expect("final pause");
        let silence = utt.frames[silence_frame].clone();
        assert_eq!(silence.len(), templates.templates[0].len());
        let decoded = decode_noise_free(&utt.frames, &silence, &config);
        assert_eq!(decoded.len(), utt.labels.len(), "{}", utt.id);
        for ((lengthened, phrase), &label) in decoded.iter().zip(&utt.labels) {
            assert_eq!(*lengthened, label >= Pw, "{}", utt.id);
            let expected = if label >= Pph { label } else { Cc };
            assert_eq!(*phrase, expected, "{}", utt.id);
        }
    }
}
