//! Synthetic `{speech, text, prosody}` corpora.
//!
//! Text is drawn from a toy character inventory where several characters share
//! one phone (homophones). Boundaries come from a five-level grammar; the
//! prosodic word and phrase groupings are either a deterministic function of
//! the local token or, with probability `p_ambig`, a coin flip that text cannot
//! predict. The rendered audio always carries the true boundaries: tokens before
//! a PW-or-higher boundary are lengthened, phrase boundaries insert silence, and
//! a pitch contour declines within each phrase.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusHeader};
use crate::error::{CoreError, Result};
use crate::label::BoundaryLabel;
use crate::utterance::{TokenSpan, Utterance};

/// Inclusive uniform integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub const fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }

    pub fn span(&self) -> u32 {
        self.max - self.min + 1
    }

    pub fn mean(&self) -> f64 {
        (self.min + self.max) as f64 / 2.0
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub vocab_size: u32,
    /// Non-silence phones; must be below `vocab_size` so that homophones exist.
    pub phone_count: u32,
    pub feature_dim: u32,
    pub iph_per_utterance: CountRange,
    pub pph_per_iph: CountRange,
    pub pw_per_pph: CountRange,
    pub lw_per_pw: CountRange,
    pub chars_per_lw: CountRange,
    pub p_ambig: f64,
    pub base_duration: u32,
    /// Extra frames on a token followed by a PW-or-higher boundary.
    pub lengthening: u32,
    /// Uniform integer jitter in `[-duration_jitter, duration_jitter]` frames.
    pub duration_jitter: u32,
    pub pause_pph: u32,
    pub pause_iph: u32,
    pub pitch_reset: f64,
    /// Pitch drop per token inside a prosodic phrase.
    pub pitch_slope: f64,
    pub noise_sigma: f64,
    /// Norm of the per-speaker offset added to every phone template.
    pub speaker_jitter: f64,
    pub train_speakers: u32,
    pub test_speakers: u32,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            vocab_size: 60,
            phone_count: 20,
            feature_dim: 16,
            iph_per_utterance: CountRange::new(1, 2),
            pph_per_iph: CountRange::new(1, 3),
            pw_per_pph: CountRange::new(1, 3),
            lw_per_pw: CountRange::new(1, 3),
            chars_per_lw: CountRange::new(1, 3),
            p_ambig: 0.5,
            base_duration: 6,
            lengthening: 3,
            duration_jitter: 1,
            pause_pph: 3,
            pause_iph: 6,
            pitch_reset: 1.0,
            pitch_slope: 0.15,
            noise_sigma: 0.3,
            speaker_jitter: 0.2,
            train_speakers: 8,
            test_speakers: 4,
            n_train: 950,
            n_dev: 50,
            n_test: 250,
            seed: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::InvalidConfig(msg));
        if self.phone_count == 0 || self.phone_count >= self.vocab_size {
            return bad(format!(
                "phone_count {} must be in 1..vocab_size ({})",
                self.phone_count, self.vocab_size
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        for (name, range) in [
            ("iph_per_utterance", self.iph_per_utterance),
            ("pph_per_iph", self.pph_per_iph),
            ("pw_per_pph", self.pw_per_pph),
            ("lw_per_pw", self.lw_per_pw),
            ("chars_per_lw", self.chars_per_lw),
        ] {
            if range.min < 1 || range.max < range.min {
                return bad(format!("{name} must satisfy 1 <= min <= max, got {range:?}"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_ambig) {
            return bad(format!("p_ambig {} outside [0, 1]", self.p_ambig));
        }
        if self.pause_pph > self.pause_iph {
            return bad("pause lengths must be non-decreasing in level".into());
        }
        if self.base_duration == 0 || self.duration_jitter >= self.base_duration {
            return bad("base_duration must exceed duration_jitter".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.speaker_jitter >= 0.0) {
            return bad("noise_sigma and speaker_jitter must be non-negative".into());
        }
        if self.train_speakers == 0 || self.test_speakers == 0 {
            return bad("speaker counts must be positive".into());
        }
        Ok(())
    }

    pub fn header(&self) -> CorpusHeader {
        CorpusHeader::new(self.vocab_size, self.phone_count, self.feature_dim)
    }
}

/// Many-to-one character → phone map, `1 + token mod P`; phone 0 is silence.
pub fn char_to_phone(token: u32, config: &GenConfig) -> Result<u32> {
    if token >= config.vocab_size {
        return Err(CoreError::TokenOutOfRange {
            token,
            vocab_size: config.vocab_size,
        });
    }
    Ok(1 + token % config.phone_count)
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one element of a named stream, independent of generation order.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

/// Node types of the grammar, indexed by how many levels lie above them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Root = 0,
    Iph = 1,
    Pph = 2,
    Pw = 3,
    Lw = 4,
}

const SALT_IPH: u64 = 0x1F3A;
const SALT_PPH: u64 = 0x2B71;
const SALT_PW: u64 = 0x3C05;

/// Left-to-right realization of the boundary grammar.
///
/// Each open node holds the number of children it has yet to start. A node's
/// child count is drawn when it opens, at the token where it starts.
struct GrammarWalk<'a> {
    config: &'a GenConfig,
    remaining: [u32; 5],
    open: [bool; 5],
}

impl<'a> GrammarWalk<'a> {
    fn new(config: &'a GenConfig) -> Self {
        Self {
            config,
            remaining: [0; 5],
            open: [false; 5],
        }
    }

    fn range(&self, node: Node) -> CountRange {
        match node {
            Node::Root => self.config.iph_per_utterance,
            Node::Iph => self.config.pph_per_iph,
            Node::Pph => self.config.pw_per_pph,
            Node::Pw => self.config.lw_per_pw,
            Node::Lw => self.config.chars_per_lw,
        }
    }

    fn draw(&self, node: Node, token: u32, rng: &mut impl Rng) -> u32 {
        let range = self.range(node);
        match node {
            Node::Root => range.sample(rng),
            Node::Lw => range.min + token % range.span(),
            Node::Iph | Node::Pph | Node::Pw => {
                let salt = match node {
                    Node::Iph => SALT_IPH,
                    Node::Pph => SALT_PPH,
                    _ => SALT_PW,
                };
                let coin: f64 = rng.gen();
                if coin < self.config.p_ambig {
                    range.sample(rng)
                } else {
                    range.min + (splitmix64(token as u64 ^ salt) % range.span() as u64) as u32
                }
            }
        }
    }

    /// Consumes one token. Returns its label and whether the utterance reached
    /// its natural end (root exhausted).
    fn step(&mut self, token: u32, force_end: bool, rng: &mut impl Rng) -> (BoundaryLabel, bool) {
        const NODES: [Node; 5] = [Node::Root, Node::Iph, Node::Pph, Node::Pw, Node::Lw];
        if !self.open[0] {
            self.remaining[0] = self.draw(Node::Root, token, rng);
            self.open[0] = true;
        }
        for level in 1..5 {
            if !self.open[level] {
                self.remaining[level - 1] -= 1;
                self.remaining[level] = self.draw(NODES[level], token, rng);
                self.open[level] = true;
            }
        }
        self.remaining[4] -= 1;

        if force_end {
            self.open = [false; 5];
            return (BoundaryLabel::Iph, true);
        }
        let mut label = BoundaryLabel::Cc;
        for level in (0..5).rev() {
            if self.remaining[level] > 0 {
                break;
            }
            self.open[level] = false;
            if level == 0 {
                return (label, true);
            }
            label = BoundaryLabel::from_index(5 - level).expect("level in range");
        }
        (label, false)
    }
}

/// Draws a boundary sequence for fixed text. The final token is always IPH;
/// when the grammar completes early a new intonational phrase is opened.
pub fn sample_prosody(tokens: &[u32], config: &GenConfig, rng: &mut impl Rng) -> Result<Vec<BoundaryLabel>> {
    if tokens.is_empty() {
        return Err(CoreError::InvalidLabelSequence("cannot sample prosody for empty text".into()));
    }
    let mut walk = GrammarWalk::new(config);
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(i, &token)| walk.step(token, i + 1 == tokens.len(), rng).0)
        .collect())
}

/// Draws text and boundaries jointly, letting the grammar decide the length.
///
/// Tokens come from `token_rng`, grouping decisions from `prosody_rng`; running
/// [`sample_prosody`] on the returned tokens with a fresh copy of the same
/// `prosody_rng` reproduces the labels.
pub fn sample_text_and_prosody(
    config: &GenConfig,
    token_rng: &mut impl Rng,
    prosody_rng: &mut impl Rng,
) -> (Vec<u32>, Vec<BoundaryLabel>) {
    let mut walk = GrammarWalk::new(config);
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    loop {
        let token = token_rng.gen_range(0..config.vocab_size);
        let (label, ended) = walk.step(token, false, prosody_rng);
        tokens.push(token);
        if ended {
            labels.push(BoundaryLabel::Iph);
            return (tokens, labels);
        }
        labels.push(label);
    }
}

/// Per-phone feature templates (index 0 is silence), fixed by the master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneTemplates {
    pub templates: Vec<Vec<f32>>,
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

const STREAM_TEMPLATES: u64 = 0x7465_6d70;
const STREAM_SPEAKER: u64 = 0x7370_6b72;
const STREAM_TRAIN: u64 = 0x7472_6e64;
const STREAM_TEST: u64 = 0x7465_7374;

impl PhoneTemplates {
    pub fn new(config: &GenConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_TEMPLATES, 0));
        let templates = (0..=config.phone_count)
            .map(|_| {
                random_unit(config.feature_dim as usize, &mut rng)
                    .into_iter()
                    .map(|x| x as f32)
                    .collect()
            })
            .collect();
        Self { templates }
    }

    /// Templates shifted by a speaker-specific offset of norm `speaker_jitter`.
    pub fn for_speaker(&self, config: &GenConfig, speaker: u32) -> Self {
        if config.speaker_jitter == 0.0 {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SPEAKER, speaker as u64));
        let offset = random_unit(config.feature_dim as usize, &mut rng);
        let templates = self
            .templates
            .iter()
            .map(|t| {
                t.iter()
                    .zip(&offset)
                    .map(|(&x, &o)| (x as f64 + config.speaker_jitter * o) as f32)
                    .collect()
            })
            .collect();
        Self { templates }
    }
}

/// Rendered acoustic side of an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedAudio {
    pub frames: Vec<Vec<f32>>,
    pub token_spans: Vec<TokenSpan>,
    pub frame_phones: Vec<u32>,
}

/// Synthesizes frames whose durations, pauses and pitch encode `labels`.
pub fn render_audio(
    tokens: &[u32],
    labels: &[BoundaryLabel],
    templates: &PhoneTemplates,
    config: &GenConfig,
    rng: &mut impl Rng,
) -> Result<RenderedAudio> {
    if tokens.len() != labels.len() {
        return Err(CoreError::LengthMismatch(format!(
            "{} tokens vs {} labels",
            tokens.len(),
            labels.len()
        )));
    }
    let noise = (config.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.noise_sigma).expect("sigma validated"));
    let mut out = RenderedAudio {
        frames: Vec::new(),
        token_spans: Vec::with_capacity(tokens.len()),
        frame_phones: Vec::new(),
    };
    let push_frame = |phone: u32, pitch: f64, out: &mut RenderedAudio, rng: &mut dyn rand::RngCore| {
        let template = &templates.templates[phone as usize];
        let frame = template
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let mut value = x as f64;
                if k == 0 {
                    value += pitch;
                }
                if let Some(noise) = &noise {
                    value += noise.sample(rng);
                }
                value as f32
            })
            .collect();
        out.frames.push(frame);
        out.frame_phones.push(phone);
    };

    let jitter = config.duration_jitter as i64;
    let mut position_in_phrase = 0u32;
    for (&token, &label) in tokens.iter().zip(labels) {
        let phone = char_to_phone(token, config)?;
        let lengthened = if label >= BoundaryLabel::Pw { config.lengthening } else { 0 };
        let offset = if jitter > 0 { rng.gen_range(-jitter..=jitter) } else { 0 };
        let duration = (config.base_duration as i64 + lengthened as i64 + offset).max(1) as u32;
        let pitch = config.pitch_reset - config.pitch_slope * position_in_phrase as f64;

        let start = out.frames.len() as u32;
        for _ in 0..duration {
            push_frame(phone, pitch, &mut out, rng);
        }
        out.token_spans.push(TokenSpan(start, start + duration));

        if label >= BoundaryLabel::Pph {
            let pause = if label == BoundaryLabel::Iph { config.pause_iph } else { config.pause_pph };
            for _ in 0..pause {
                push_frame(0, 0.0, &mut out, rng);
            }
            position_in_phrase = 0;
        } else {
            position_in_phrase += 1;
        }
    }
    Ok(out)
}

/// Which part of a generated corpus an utterance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

impl SplitCorpus {
    pub fn get(&self, split: Split) -> &Corpus {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Generates utterance `index` of `split`. Train and dev share one seed range
/// (dev continues after train); test uses its own range and unseen speakers.
pub fn generate_utterance(
    config: &GenConfig,
    templates: &PhoneTemplates,
    split: Split,
    index: usize,
) -> Utterance {
    let (stream, global_index) = match split {
        Split::Train => (STREAM_TRAIN, index),
        Split::Dev => (STREAM_TRAIN, config.n_train + index),
        Split::Test => (STREAM_TEST, index),
    };
    let seed = derive_seed(config.seed, stream, global_index as u64);
    let mut token_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prosody_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 1));
    let mut audio_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 2));

    let speaker = match split {
        Split::Test => config.train_speakers + audio_rng.gen_range(0..config.test_speakers),
        _ => audio_rng.gen_range(0..config.train_speakers),
    };
    let voice = templates.for_speaker(config, speaker);
    let (tokens, labels) = sample_text_and_prosody(config, &mut token_rng, &mut prosody_rng);
    let audio = render_audio(&tokens, &labels, &voice, config, &mut audio_rng)
        .expect("generated tokens are in range");
    Utterance {
        id: format!("{}-{:06}", split.name(), index),
        tokens,
        labels,
        frames: audio.frames,
        token_spans: audio.token_spans,
        frame_phones: audio.frame_phones,
    }
}

fn generate_split(config: &GenConfig, templates: &PhoneTemplates, split: Split, n: usize) -> Corpus {
    let make = |i| generate_utterance(config, templates, split, i);
    #[cfg(feature = "parallel")]
    let utterances = (0..n).into_par_iter().map(make).collect();
    #[cfg(not(feature = "parallel"))]
    let utterances = (0..n).map(make).collect();
    Corpus::new(config.header(), utterances)
}

/// Generates train/dev/test corpora. Output is independent of thread scheduling.
pub fn generate_corpus(config: &GenConfig) -> Result<SplitCorpus> {
    config.validate()?;
    let templates = PhoneTemplates::new(config);
    Ok(SplitCorpus {
        train: generate_split(config, &templates, Split::Train, config.n_train),
        dev: generate_split(config, &templates, Split::Dev, config.n_dev),
        test: generate_split(config, &templates, Split::Test, config.n_test),
    })
}

/// Sequential generation, kept for benchmarking against the parallel path.
pub fn generate_corpus_sequential(config: &GenConfig) -> Result<SplitCorpus> {
    config.validate()?;
    let templates = PhoneTemplates::new(config);
    let split = |s, n| {
        Corpus::new(
            config.header(),
            (0..n).map(|i| generate_utterance(config, &templates, s, i)).collect(),
        )
    };
    Ok(SplitCorpus {
        train: split(Split::Train, config.n_train),
        dev: split(Split::Dev, config.n_dev),
        test: split(Split::Test, config.n_test),
    })
}
