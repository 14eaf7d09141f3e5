//! Fine-tuning the annotator on triplets and the pre-trained × fixed grid.

use std::fmt::Write as _;
use std::path::PathBuf;

use prosody_core::eval::{ConfusionCounts, LevelScores, MetricsReport, ReportRow};
use prosody_core::{BoundaryLabel, Corpus, Utterance, NUM_LABELS};
use prosody_nn::{checkpoint, AdamConfig, Graph, ParameterStore};
use serde::{Deserialize, Serialize};

use crate::annotator::{Annotator, Example, AUDIO_PREFIX};
use crate::batch::map_items;
use crate::config::{AudioEncoderKind, ModelConfig, Preset};
use crate::error::{ModelError, Result};
use crate::output::argmax_lowest;
use crate::pretrain::{epoch_order, optimize_epoch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub audio_encoder: AudioEncoderKind,
    /// Initialize the audio encoder from `pretrained_path`.
    pub pretrained: bool,
    pub pretrained_path: Option<PathBuf>,
    /// Keep the audio encoder at its initial values.
    pub fixed: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without dev-loss improvement before stopping; 0 disables.
    pub patience: usize,
    pub preset: Preset,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            audio_encoder: AudioEncoderKind::ConformerChar,
            pretrained: false,
            pretrained_path: None,
            fixed: false,
            epochs: 30,
            batch_size: 8,
            lr: 1e-4,
            seed: 1,
            patience: 5,
            preset: Preset::Desk,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fixed && !self.audio_encoder.has_audio() {
            return Err(ModelError::Config("fixed = true requires an audio encoder".into()));
        }
        if self.pretrained && !self.audio_encoder.has_audio() {
            return Err(ModelError::Config("pretrained = true requires an audio encoder".into()));
        }
        if self.pretrained && self.pretrained_path.is_none() {
            return Err(ModelError::Config("pretrained = true requires a pre-training checkpoint path".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {} is not a finite non-negative number", self.lr)));
        }
        Ok(())
    }
}

/// Loss and label counts over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEval {
    pub loss_sum: f64,
    pub tokens: usize,
    pub counts: ConfusionCounts,
    pub predictions: Vec<Vec<BoundaryLabel>>,
}

impl SplitEval {
    pub fn mean_loss(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.loss_sum / self.tokens as f64
        }
    }

    pub fn scores(&self) -> LevelScores {
        self.counts.scores()
    }

    pub fn accuracy(&self) -> f64 {
        self.counts.accuracy()
    }
}

/// Forward-only evaluation of every utterance of `corpus`.
pub fn evaluate(model: &Annotator, store: &ParameterStore<f32>, corpus: &Corpus) -> Result<SplitEval> {
    let parts = map_items(&corpus.utterances, |utt| -> Result<(f64, Vec<BoundaryLabel>)> {
        let mut g = Graph::new(store);
        let trace = model.forward(&mut g, Example::from(utt))?;
        let targets: Vec<Option<usize>> = utt.labels.iter().map(|l| Some(l.index())).collect();
        let loss = g.cross_entropy(trace.logits, &targets)?;
        let logits: Vec<f64> = g.value(trace.logits).data().iter().map(|&x| x as f64).collect();
        let pred = logits
            .chunks(NUM_LABELS)
            .map(|row| BoundaryLabel::ALL[argmax_lowest(row)])
            .collect();
        Ok((g.value(loss).data()[0] as f64, pred))
    });
    let mut out = SplitEval {
        loss_sum: 0.0,
        tokens: 0,
        counts: ConfusionCounts::default(),
        predictions: Vec::with_capacity(corpus.len()),
    };
    for (part, utt) in parts.into_iter().zip(&corpus.utterances) {
        let (loss, pred) = part?;
        out.loss_sum += loss;
        out.tokens += utt.tokens.len();
        out.counts.add(&utt.labels, &pred)?;
        out.predictions.push(pred);
    }
    Ok(out)
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    /// Mean per-token cross entropy.
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub scores: Option<LevelScores>,
}

impl EpochRecord {
    fn from_eval(epoch: usize, split: &str, eval: &SplitEval) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            loss: eval.mean_loss(),
            accuracy: Some(eval.accuracy()),
            scores: Some(eval.scores()),
        }
    }
}

/// CSV with columns `epoch,split,loss,accuracy` then P/R/F1 per reported level.
pub fn log_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy");
    for level in BoundaryLabel::REPORTED {
        let n = level.name();
        write!(out, ",{n}_pre,{n}_rec,{n}_f1").unwrap();
    }
    out.push('\n');
    for r in records {
        write!(out, "{},{},{}", r.epoch, r.split, r.loss).unwrap();
        match r.accuracy {
            Some(a) => write!(out, ",{a}").unwrap(),
            None => out.push(','),
        }
        match &r.scores {
            Some(s) => {
                for score in &s.0 {
                    write!(out, ",{},{},{}", score.precision, score.recall, score.f1).unwrap();
                }
            }
            None => out.push_str(&",".repeat(12)),
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Annotator,
    /// Parameters from the epoch with the lowest dev loss (the last epoch without a dev split).
    pub store: ParameterStore<f32>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Builds the model for `config`, loading and freezing the audio encoder as requested.
pub fn initial_model(model_config: &ModelConfig, config: &TrainConfig) -> Result<(Annotator, ParameterStore<f32>)> {
    config.validate()?;
    let (model, mut store) = Annotator::build::<f32>(model_config, config.audio_encoder, config.seed)?;
    if config.pretrained {
        let path = config.pretrained_path.as_ref().expect("validated");
        let loaded = checkpoint::load_prefix(&mut store, path, AUDIO_PREFIX)?;
        if loaded == 0 {
            return Err(ModelError::Config("pre-training checkpoint holds no audio encoder".into()));
        }
    }
    if config.fixed {
        store.set_trainable_prefix(AUDIO_PREFIX, false);
    }
    Ok((model, store))
}

pub fn train(train: &Corpus, dev: &Corpus, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(train, dev, model_config, config, |_| {})
}

/// As [`train`], calling `progress` after every logged record.
pub fn train_with_progress(
    train: &Corpus,
    dev: &Corpus,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(ModelError::Empty("training split"));
    }
    let (model, mut store) = initial_model(model_config, config)?;
    let adam = AdamConfig::with_lr(config.lr);
    let train_tokens: usize = train.utterances.iter().map(|u| u.tokens.len()).sum();

    let mut log = Vec::new();
    let mut record = |r: EpochRecord, log: &mut Vec<EpochRecord>| {
        progress(&r);
        log.push(r);
    };
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_store = store.clone();
    if !dev.is_empty() {
        let eval = evaluate(&model, &store, dev)?;
        best_loss = eval.mean_loss();
        record(EpochRecord::from_eval(0, "dev", &eval), &mut log);
    }

    let mut epochs_run = 0;
    for epoch in 1..=config.epochs {
        let order: Vec<&Utterance> = epoch_order(train.len(), config.seed, epoch)
            .into_iter()
            .map(|i| &train.utterances[i])
            .collect();
        let total = optimize_epoch(&mut store, &order, config.batch_size, &adam, |g, u: &&Utterance| {
            model.loss(g, Example::from(*u), &u.labels)
        })?;
        epochs_run = epoch;
        record(
            EpochRecord {
                epoch,
                split: "train".into(),
                loss: total / train_tokens as f64,
                accuracy: None,
                scores: None,
            },
            &mut log,
        );
        if dev.is_empty() {
            best_epoch = epoch;
            best_store = store.clone();
            continue;
        }
        let eval = evaluate(&model, &store, dev)?;
        let loss = eval.mean_loss();
        record(EpochRecord::from_eval(epoch, "dev", &eval), &mut log);
        if loss < best_loss {
            best_loss = loss;
            best_epoch = epoch;
            best_store = store.clone();
        } else if config.patience > 0 && epoch - best_epoch >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        store: best_store,
        log,
        best_epoch,
        epochs_run,
    })
}

/// One trained and evaluated grid cell.
#[derive(Debug, Clone)]
pub struct AblationResult {
    pub config: TrainConfig,
    pub outcome: TrainOutcome,
    pub test: SplitEval,
    pub row: ReportRow,
}

pub fn report_row(id: usize, config: &TrainConfig, scores: LevelScores) -> ReportRow {
    let audio = config.audio_encoder.has_audio();
    ReportRow {
        id: id.to_string(),
        model: config.audio_encoder.display_name().to_string(),
        pretrained: audio.then_some(config.pretrained),
        fixed: audio.then_some(config.fixed),
        scores,
    }
}

/// Trains every cell of `grid` and scores it on `test`, in grid order.
pub fn run_ablation(
    train_split: &Corpus,
    dev: &Corpus,
    test: &Corpus,
    model_config: &ModelConfig,
    grid: &[TrainConfig],
) -> Result<Vec<AblationResult>> {
    grid.iter().try_for_each(|c| c.validate())?;
    grid.iter()
        .enumerate()
        .map(|(i, config)| {
            let outcome = train(train_split, dev, model_config, config)?;
            let test_eval = evaluate(&outcome.model, &outcome.store, test)?;
            let row = report_row(i + 1, config, test_eval.scores());
            Ok(AblationResult {
                config: config.clone(),
                outcome,
                test: test_eval,
                row,
            })
        })
        .collect()
}

pub fn ablation_report(results: &[AblationResult]) -> MetricsReport {
    MetricsReport::new(results.iter().map(|r| r.row.clone()).collect())
}
