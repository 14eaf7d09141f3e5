//! Flat `key = value` run configuration.
//!
//! Keys and defaults are taken from the serialized form of the library
//! configs, so every field of [`GenConfig`], [`ModelConfig`], [`TrainConfig`]
//! and [`PretrainConfig`] is addressable and nothing else is.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use prosody_core::eval::Binarization;
use prosody_core::synth::GenConfig;
use prosody_core::CorpusHeader;
use prosody_model::{AudioEncoderKind, ModelConfig, Objective, PretrainConfig, Preset, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Fields of [`ModelConfig`] that come from the corpus, not the config.
const CORPUS_FIELDS: [&str; 3] = ["vocab_size", "phone_count", "feature_dim"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub binarization: Binarization,
    /// Utterances drawn by `absample`.
    pub absample_n: usize,
    pub seed: u64,
    /// Comma-separated results-grid row ids trained by `ablate`.
    pub grid: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            binarization: Binarization::Exact,
            absample_n: 300,
            seed: 1,
            grid: "1,3,4,5,6,7,8,9".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveChoice {
    /// The usual objective for the encoder kind.
    Auto,
    FramePhones,
    FrameChars,
    Ctc,
}

impl ObjectiveChoice {
    pub fn resolve(self, kind: AudioEncoderKind) -> Option<Objective> {
        match self {
            Self::Auto => Objective::default_for(kind),
            Self::FramePhones => Some(Objective::FramePhones),
            Self::FrameChars => Some(Objective::FrameChars),
            Self::Ctc => Some(Objective::Ctc),
        }
    }
}

/// Merged configuration: defaults, then the config file, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
    explicit: BTreeSet<String>,
}

/// Typed view of a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub gen: GenConfig,
    pub preset: Preset,
    pub audio_encoder: AudioEncoderKind,
    model: Map<String, Value>,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub pretrain_objective: ObjectiveChoice,
    pub eval: EvalConfig,
}

impl Resolved {
    /// Network sizes for a corpus with the given header.
    pub fn model_config(&self, header: &CorpusHeader) -> Result<ModelConfig> {
        let mut fields = self.model.clone();
        fields.insert("vocab_size".into(), header.vocab_size.into());
        fields.insert("phone_count".into(), header.phone_count.into());
        fields.insert("feature_dim".into(), header.feature_dim.into());
        let config: ModelConfig = from_fields("model", fields)?;
        config.validate()?;
        Ok(config)
    }
}

fn to_object<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value).expect("configs serialize") {
        Value::Object(map) => map,
        _ => unreachable!("configs are structs"),
    }
}

fn from_fields<T: DeserializeOwned>(section: &str, fields: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(fields)).map_err(|e| CliError::Config(format!("{section}.*: {e}")))
}

fn model_sizes(preset: Preset) -> Map<String, Value> {
    let mut sizes = to_object(&ModelConfig::preset(preset, &CorpusHeader::new(1, 1, 1)));
    for field in CORPUS_FIELDS {
        sizes.remove(field);
    }
    sizes
}

fn defaults() -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    let mut section = |name: &str, fields: Map<String, Value>| {
        for (k, v) in fields {
            out.insert(format!("{name}.{k}"), v);
        }
    };
    section("gen", to_object(&GenConfig::default()));

    let mut model = model_sizes(Preset::Desk);
    let train = TrainConfig::default();
    model.insert("preset".into(), Value::String(Preset::Desk.to_string()));
    model.insert("audio_encoder".into(), Value::String(train.audio_encoder.to_string()));
    section("model", model);

    let mut train_fields = to_object(&train);
    train_fields.remove("audio_encoder");
    train_fields.remove("preset");
    let pretrain = PretrainConfig::default();
    train_fields.insert("pretrain_epochs".into(), pretrain.epochs.into());
    train_fields.insert("pretrain_batch_size".into(), pretrain.batch_size.into());
    train_fields.insert("pretrain_lr".into(), pretrain.lr.into());
    train_fields.insert("pretrain_objective".into(), to_value(ObjectiveChoice::Auto));
    section("train", train_fields);

    section("eval", to_object(&EvalConfig::default()));
    out
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("plain values serialize")
}

/// Renders a value as it appears on the right of `=`.
fn render(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Object(map) => match (map.get("min"), map.get("max")) {
            (Some(min), Some(max)) => format!("{min},{max}"),
            _ => value.to_string(),
        },
        other => other.to_string(),
    }
}

/// Parses `text` into a value of the same shape as `like`.
fn parse_like(key: &str, like: &Value, text: &str) -> Result<Value> {
    let bad = |what: &str| CliError::Config(format!("`{key}`: expected {what}, found `{text}`"));
    Ok(match like {
        Value::Bool(_) => Value::Bool(text.parse().map_err(|_| bad("true or false"))?),
        Value::Number(n) if n.is_u64() => Value::from(text.parse::<u64>().map_err(|_| bad("a non-negative integer"))?),
        Value::Number(_) => {
            let x: f64 = text.parse().map_err(|_| bad("a number"))?;
            serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(|| bad("a finite number"))?
        }
        Value::Object(_) => {
            let (min, max) = text.split_once(',').ok_or_else(|| bad("`min,max`"))?;
            let parse = |s: &str| s.trim().parse::<u32>().map_err(|_| bad("`min,max` integers"));
            serde_json::json!({ "min": parse(min)?, "max": parse(max)? })
        }
        Value::Null if text.is_empty() => Value::Null,
        Value::Null | Value::String(_) => Value::String(text.to_string()),
        Value::Array(_) => return Err(bad("a scalar")),
    })
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: defaults(),
            explicit: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    /// Every known key.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.values.get(key).map(render)
    }

    pub fn set(&mut self, key: &str, text: &str) -> Result<()> {
        let like = self
            .values
            .get(key)
            .ok_or_else(|| CliError::Config(format!("unknown key `{key}`")))?;
        let value = parse_like(key, like, text.trim())?;
        self.values.insert(key.to_string(), value);
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("`--set {pair}`: expected KEY=VALUE")))?;
        self.set(key.trim(), value)
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: CliError| CliError::Config(format!("{origin}:{}: {}", i + 1, e.message()));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(CliError::Config("expected `key = value`".into())))?;
            self.set(key.trim(), value).map_err(at)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// Sets every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        for key in ["gen.seed", "train.seed", "eval.seed"] {
            self.set(key, &seed.to_string()).expect("seed keys exist");
        }
    }

    /// Sorted `key = value` lines; reading them back yields the same config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            writeln!(out, "{k} = {}", render(v)).unwrap();
        }
        out
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, v)| (k.clone(), render(v))).collect()
    }

    fn section(&self, name: &str) -> Map<String, Value> {
        let prefix = format!("{name}.");
        self.values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|f| (f.to_string(), v.clone())))
            .collect()
    }

    /// Fills model sizes the user did not set from the chosen preset and
    /// checks every value.
    pub fn resolve(&mut self) -> Result<Resolved> {
        let preset: Preset = render(&self.values["model.preset"]).parse()?;
        for (field, value) in model_sizes(preset) {
            let key = format!("model.{field}");
            if !self.explicit.contains(&key) {
                self.values.insert(key, value);
            }
        }

        let gen: GenConfig = from_fields("gen", self.section("gen"))?;
        gen.validate()?;

        let mut model = self.section("model");
        model.remove("preset");
        let audio_encoder: AudioEncoderKind = render(&model.remove("audio_encoder").expect("default exists")).parse()?;
        let mut sizes = model.clone();
        for field in CORPUS_FIELDS {
            sizes.insert(field.into(), 1.into());
        }
        from_fields::<ModelConfig>("model", sizes)?;

        let mut train_fields = self.section("train");
        let take = |fields: &mut Map<String, Value>, f: &str| fields.remove(f).expect("default exists");
        let pretrain = PretrainConfig {
            epochs: from_value("train.pretrain_epochs", take(&mut train_fields, "pretrain_epochs"))?,
            batch_size: from_value("train.pretrain_batch_size", take(&mut train_fields, "pretrain_batch_size"))?,
            lr: from_value("train.pretrain_lr", take(&mut train_fields, "pretrain_lr"))?,
            seed: from_value("train.seed", train_fields["seed"].clone())?,
        };
        pretrain.validate()?;
        let pretrain_objective = from_value("train.pretrain_objective", take(&mut train_fields, "pretrain_objective"))?;
        train_fields.insert("audio_encoder".into(), to_value(audio_encoder));
        train_fields.insert("preset".into(), to_value(preset));
        let train: TrainConfig = from_fields("train", train_fields)?;

        let eval: EvalConfig = from_fields("eval", self.section("eval"))?;
        Ok(Resolved {
            gen,
            preset,
            audio_encoder,
            model,
            train,
            pretrain,
            pretrain_objective,
            eval,
        })
    }
}

fn from_value<T: DeserializeOwned>(key: &str, value: Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("`{key}`: {e}")))
}
