use std::path::{Path, PathBuf};

use prosody_core::annotation::{align, read_labels, write_annotations};
use prosody_core::eval::{sample_disagreements, AnnotationSet, ConfusionCounts, MetricsReport, ReportRow};
use prosody_core::synth::generate_corpus;
use prosody_core::{AnnotationRecord, BoundaryLabel, Corpus};
use prosody_model::batch::map_items;
use prosody_model::train::{log_to_csv, report_row, train_with_progress, EpochRecord};
use prosody_model::{evaluate, pretrain, Annotator, AudioEncoderKind, ModelConfig, Objective, TrainConfig};
use prosody_nn::checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, RunConfig};
use crate::error::{CliError, Result};
use crate::run::{ensure_not_input, ensure_parent, write_file, Manifest, RunDir};

pub struct Context {
    pub run: RunDir,
    pub config: RunConfig,
    pub resolved: Resolved,
}

/// Written next to every checkpoint so it can be rebuilt without the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub audio_encoder: AudioEncoderKind,
    /// Set for pre-training checkpoints.
    pub objective: Option<Objective>,
    pub model: ModelConfig,
}

impl ModelCard {
    pub fn path_for(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("json")
    }

    pub fn read(checkpoint: &Path) -> Result<Self> {
        let path = Self::path_for(checkpoint);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn write(&self, checkpoint: &Path) -> Result<PathBuf> {
        let path = Self::path_for(checkpoint);
        write_file(&path, serde_json::to_string_pretty(self).expect("card serializes") + "\n")?;
        Ok(path)
    }
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    Corpus::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn labels(path: &Path) -> Result<Vec<(String, Vec<BoundaryLabel>)>> {
    read_labels(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn save_checkpoint(store: &prosody_nn::ParameterStore<f32>, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    Ok(checkpoint::save(store, path)?)
}

fn progress(tag: &str) -> impl FnMut(&EpochRecord) + '_ {
    move |r| match r.accuracy {
        Some(acc) => eprintln!("[{tag}] epoch {} {} loss {:.4} acc {:.4}", r.epoch, r.split, r.loss, acc),
        None => eprintln!("[{tag}] epoch {} {} loss {:.4}", r.epoch, r.split, r.loss),
    }
}

pub fn gen(ctx: &Context) -> Result<()> {
    let gen = &ctx.resolved.gen;
    let corpus = generate_corpus(gen)?;
    let mut manifest = Manifest::new("gen", &ctx.config, Some(gen.seed));
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let path = ctx.run.corpus(&format!("{name}.jsonl"));
        ensure_parent(&path)?;
        split.write(&path)?;
        manifest.output(&ctx.run, &path)?;
        println!("{name}: {} utterances -> {}", split.len(), path.display());
    }
    manifest.write(&ctx.run, &ctx.config)?;
    Ok(())
}

fn pretrained_checkpoint(run: &RunDir, kind: AudioEncoderKind) -> PathBuf {
    run.checkpoints(&format!("pretrain_{kind}.ckpt"))
}

/// Pre-trains the audio encoder of `kind` and writes its checkpoint, card and loss log.
fn pretrain_into(
    ctx: &Context,
    corpus: &Corpus,
    kind: AudioEncoderKind,
    checkpoint_path: &Path,
    log_path: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let objective = ctx.resolved.pretrain_objective.resolve(kind).ok_or_else(|| {
        CliError::Config("the text-only model has no audio encoder to pre-train; set model.audio_encoder".into())
    })?;
    let model_config = ctx.resolved.model_config(&corpus.header)?;
    eprintln!("[pretrain] {kind} with {objective:?} on {} utterances", corpus.len());
    let outcome = pretrain(corpus, &model_config, kind, objective, &ctx.resolved.pretrain)?;
    save_checkpoint(&outcome.store, checkpoint_path)?;
    let card = ModelCard {
        audio_encoder: kind,
        objective: Some(objective),
        model: model_config,
    }
    .write(checkpoint_path)?;
    let mut log = String::from("epoch,loss\n");
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        log.push_str(&format!("{},{loss}\n", i + 1));
        eprintln!("[pretrain] epoch {} loss {loss:.4}", i + 1);
    }
    write_file(log_path, log)?;
    for path in [checkpoint_path, card.as_path(), log_path] {
        manifest.output(&ctx.run, path)?;
    }
    Ok(())
}

pub fn pretrain_cmd(ctx: &Context, corpus: Option<PathBuf>, encoder: Option<AudioEncoderKind>) -> Result<()> {
    let kind = encoder.unwrap_or(ctx.resolved.audio_encoder);
    let corpus_path = corpus.unwrap_or_else(|| ctx.run.corpus("train.jsonl"));
    let corpus = read_corpus(&corpus_path)?;
    let mut manifest = Manifest::new(&format!("pretrain_{kind}"), &ctx.config, Some(ctx.resolved.pretrain.seed));
    manifest.input(&ctx.run, &corpus_path)?;
    let ckpt = pretrained_checkpoint(&ctx.run, kind);
    pretrain_into(ctx, &corpus, kind, &ckpt, &ctx.run.logs(&format!("pretrain_{kind}.csv")), &mut manifest)?;
    manifest.write(&ctx.run, &ctx.config)?;
    println!("pre-trained {kind} -> {}", ckpt.display());
    Ok(())
}

pub fn train_cmd(ctx: &Context, train: Option<PathBuf>, dev: Option<PathBuf>, pretrained: Option<PathBuf>) -> Result<()> {
    let mut config: TrainConfig = ctx.resolved.train.clone();
    if let Some(path) = pretrained {
        config.pretrained = true;
        config.pretrained_path = Some(path);
    } else if config.pretrained && config.pretrained_path.is_none() {
        config.pretrained_path = Some(pretrained_checkpoint(&ctx.run, config.audio_encoder));
    }
    config.validate()?;

    let train_path = train.unwrap_or_else(|| ctx.run.corpus("train.jsonl"));
    let dev_path = dev.unwrap_or_else(|| ctx.run.corpus("dev.jsonl"));
    let train_corpus = read_corpus(&train_path)?;
    let dev_corpus = read_corpus(&dev_path)?;
    let model_config = ctx.resolved.model_config(&train_corpus.header)?;

    let mut manifest = Manifest::new("train", &ctx.config, Some(config.seed));
    manifest.input(&ctx.run, &train_path)?;
    manifest.input(&ctx.run, &dev_path)?;
    if let Some(path) = config.pretrained_path.as_deref().filter(|_| config.pretrained) {
        manifest.input(&ctx.run, path)?;
    }

    let outcome = train_with_progress(&train_corpus, &dev_corpus, &model_config, &config, progress("train"))?;
    let ckpt = ctx.run.checkpoints("model.ckpt");
    save_checkpoint(&outcome.store, &ckpt)?;
    let card = ModelCard {
        audio_encoder: config.audio_encoder,
        objective: None,
        model: model_config,
    }
    .write(&ckpt)?;
    let log = ctx.run.logs("train.csv");
    write_file(&log, log_to_csv(&outcome.log))?;
    for path in [&ckpt, &card, &log] {
        manifest.output(&ctx.run, path)?;
    }
    manifest.write(&ctx.run, &ctx.config)?;
    println!(
        "trained {} for {} epochs, best dev epoch {} -> {}",
        config.audio_encoder,
        outcome.epochs_run,
        outcome.best_epoch,
        ckpt.display()
    );
    Ok(())
}

pub fn annotate(ctx: &Context, model: Option<PathBuf>, input: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let ckpt = model.unwrap_or_else(|| ctx.run.checkpoints("model.ckpt"));
    let card = ModelCard::read(&ckpt)?;
    let (annotator, mut store) = Annotator::build::<f32>(&card.model, card.audio_encoder, 0)?;
    checkpoint::load(&mut store, &ckpt)?;

    let input = input.unwrap_or_else(|| ctx.run.corpus("test.jsonl"));
    let output = output.unwrap_or_else(|| ctx.run.reports("annotations.jsonl"));
    ensure_not_input(&output, &[&input, &ckpt])?;
    let corpus = read_corpus(&input)?;
    let records = map_items(&corpus.utterances, |u| {
        annotator.annotate(&store, u).map(|labels| AnnotationRecord {
            id: u.id.clone(),
            labels,
            ref_labels: Some(u.labels.clone()),
        })
    })
    .into_iter()
    .collect::<std::result::Result<Vec<_>, _>>()?;
    ensure_parent(&output)?;
    write_annotations(&records, &output)?;

    let mut manifest = Manifest::new("annotate", &ctx.config, None);
    manifest.input(&ctx.run, &ckpt)?;
    manifest.input(&ctx.run, &input)?;
    manifest.output(&ctx.run, &output)?;
    manifest.write(&ctx.run, &ctx.config)?;
    println!("annotated {} utterances -> {}", records.len(), output.display());
    Ok(())
}

fn write_report(ctx: &Context, report: &MetricsReport, manifest: &mut Manifest, inputs: &[&Path]) -> Result<()> {
    let md = ctx.run.reports("report.md");
    let csv = ctx.run.reports("report.csv");
    ensure_not_input(&md, inputs)?;
    ensure_not_input(&csv, inputs)?;
    write_file(&md, report.to_markdown())?;
    write_file(&csv, report.to_csv())?;
    manifest.output(&ctx.run, &md)?;
    manifest.output(&ctx.run, &csv)?;
    print!("{}", report.to_markdown());
    Ok(())
}

pub fn evaluate_cmd(ctx: &Context, reference: &Path, hypothesis: &Path, name: Option<String>) -> Result<()> {
    let r = labels(reference)?;
    let h = labels(hypothesis)?;
    align(&r, &h)?;
    let mut counts = ConfusionCounts::default();
    for ((_, rl), (_, hl)) in r.iter().zip(&h) {
        counts.add(rl, hl)?;
    }
    let model = name.unwrap_or_else(|| {
        hypothesis
            .file_stem()
            .map_or_else(|| "hypothesis".into(), |s| s.to_string_lossy().into_owned())
    });
    let report = MetricsReport::new(vec![ReportRow {
        id: "1".into(),
        model,
        pretrained: None,
        fixed: None,
        scores: counts.scores(),
    }]);
    let mut manifest = Manifest::new("evaluate", &ctx.config, None);
    manifest.input(&ctx.run, reference)?;
    manifest.input(&ctx.run, hypothesis)?;
    write_report(ctx, &report, &mut manifest, &[reference, hypothesis])?;
    println!("token accuracy {:.4}", counts.accuracy());
    manifest.write(&ctx.run, &ctx.config)?;
    Ok(())
}

pub fn kappa(ctx: &Context, files: &[PathBuf]) -> Result<()> {
    let mut annotators = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let stem = path
            .file_stem()
            .map_or_else(|| format!("annotator{i}"), |s| s.to_string_lossy().into_owned());
        let name = if annotators.iter().any(|(n, _)| n == &stem) {
            format!("{stem}#{i}")
        } else {
            stem
        };
        annotators.push((name, labels(path)?));
    }
    let set = AnnotationSet::new(annotators)?;
    let mode = ctx.resolved.eval.binarization;
    let fmt = |k: Option<f64>| k.map_or_else(|| "undefined".to_string(), |k| k.to_string());

    let mut csv = String::from("level,statistic,annotator_a,annotator_b,kappa\n");
    for level in BoundaryLabel::REPORTED {
        let fleiss = set.fleiss(level, mode).ok();
        csv.push_str(&format!("{},fleiss,*,*,{}\n", level.name(), fmt(fleiss)));
        println!("{} fleiss {}", level.name(), fleiss.map_or("undefined".into(), |k| format!("{k:.4}")));
        for entry in set.cohen_pairs(level, mode) {
            csv.push_str(&format!(
                "{},cohen,{},{},{}\n",
                level.name(),
                entry.annotator_a,
                entry.annotator_b,
                fmt(entry.kappa)
            ));
        }
    }
    let out = ctx.run.reports("kappa.csv");
    let inputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    ensure_not_input(&out, &inputs)?;
    write_file(&out, csv)?;
    let mut manifest = Manifest::new("kappa", &ctx.config, None);
    for path in files {
        manifest.input(&ctx.run, path)?;
    }
    manifest.output(&ctx.run, &out)?;
    manifest.write(&ctx.run, &ctx.config)?;
    Ok(())
}

pub fn absample(ctx: &Context, reference: &Path, hypothesis: &Path, n: Option<usize>) -> Result<()> {
    let eval = &ctx.resolved.eval;
    let ids = sample_disagreements(&labels(reference)?, &labels(hypothesis)?, n.unwrap_or(eval.absample_n), eval.seed)?;
    let out = ctx.run.reports("absample.txt");
    ensure_not_input(&out, &[reference, hypothesis])?;
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    write_file(&out, &text)?;
    print!("{text}");
    let mut manifest = Manifest::new("absample", &ctx.config, Some(eval.seed));
    manifest.input(&ctx.run, reference)?;
    manifest.input(&ctx.run, hypothesis)?;
    manifest.output(&ctx.run, &out)?;
    manifest.write(&ctx.run, &ctx.config)?;
    Ok(())
}

/// Rows of the results grid: `(id, encoder, pre-trained, fixed)`.
pub const GRID: [(usize, AudioEncoderKind, bool, bool); 8] = [
    (1, AudioEncoderKind::None, false, false),
    (3, AudioEncoderKind::CnnChar, false, false),
    (4, AudioEncoderKind::CnnChar, true, true),
    (5, AudioEncoderKind::CnnChar, true, false),
    (6, AudioEncoderKind::ConformerChar, false, false),
    (7, AudioEncoderKind::ConformerChar, true, true),
    (8, AudioEncoderKind::ConformerChar, true, false),
    (9, AudioEncoderKind::Ppg, true, true),
];

pub fn parse_grid(spec: &str) -> Result<Vec<(usize, AudioEncoderKind, bool, bool)>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let id: usize = s
                .parse()
                .map_err(|_| CliError::Config(format!("eval.grid: `{s}` is not a row id")))?;
            GRID.iter().copied().find(|c| c.0 == id).ok_or_else(|| {
                let known: Vec<String> = GRID.iter().map(|c| c.0.to_string()).collect();
                CliError::Config(format!("eval.grid: unknown row {id} (known: {})", known.join(",")))
            })
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|cells| {
            if cells.is_empty() {
                Err(CliError::Config("eval.grid is empty".into()))
            } else {
                Ok(cells)
            }
        })
}

pub fn ablate(ctx: &Context, train: Option<PathBuf>, dev: Option<PathBuf>, test: Option<PathBuf>) -> Result<()> {
    let cells = parse_grid(&ctx.resolved.eval.grid)?;
    let paths = [
        train.unwrap_or_else(|| ctx.run.corpus("train.jsonl")),
        dev.unwrap_or_else(|| ctx.run.corpus("dev.jsonl")),
        test.unwrap_or_else(|| ctx.run.corpus("test.jsonl")),
    ];
    let [train_c, dev_c, test_c] = [read_corpus(&paths[0])?, read_corpus(&paths[1])?, read_corpus(&paths[2])?];
    let model_config = ctx.resolved.model_config(&train_c.header)?;
    let mut manifest = Manifest::new("ablate", &ctx.config, Some(ctx.resolved.train.seed));
    for path in &paths {
        manifest.input(&ctx.run, path)?;
    }

    let mut pretrained = Vec::new();
    for &(_, kind, pre, _) in &cells {
        if pre && !pretrained.contains(&kind) {
            let ckpt = ctx.run.checkpoints(&format!("ablate/pretrain_{kind}.ckpt"));
            let log = ctx.run.logs(&format!("ablate/pretrain_{kind}.csv"));
            pretrain_into(ctx, &train_c, kind, &ckpt, &log, &mut manifest)?;
            pretrained.push(kind);
        }
    }

    let mut rows = Vec::new();
    for (id, kind, pre, fixed) in cells {
        let config = TrainConfig {
            audio_encoder: kind,
            pretrained: pre,
            pretrained_path: pre.then(|| ctx.run.checkpoints(&format!("ablate/pretrain_{kind}.ckpt"))),
            fixed,
            ..ctx.resolved.train.clone()
        };
        let tag = format!("row {id}");
        let outcome = train_with_progress(&train_c, &dev_c, &model_config, &config, progress(&tag))?;
        let ckpt = ctx.run.checkpoints(&format!("ablate/row{id}.ckpt"));
        save_checkpoint(&outcome.store, &ckpt)?;
        let card = ModelCard {
            audio_encoder: kind,
            objective: None,
            model: model_config.clone(),
        }
        .write(&ckpt)?;
        let log = ctx.run.logs(&format!("ablate/row{id}.csv"));
        write_file(&log, log_to_csv(&outcome.log))?;
        for path in [&ckpt, &card, &log] {
            manifest.output(&ctx.run, path)?;
        }
        let scores = evaluate(&outcome.model, &outcome.store, &test_c)?.scores();
        rows.push(report_row(id, &config, scores));
    }
    let inputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    write_report(ctx, &MetricsReport::new(rows), &mut manifest, &inputs)?;
    manifest.write(&ctx.run, &ctx.config)?;
    Ok(())
}

pub fn report(ctx: &Context, inputs: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    let mut manifest = Manifest::new("report", &ctx.config, None);
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let part = MetricsReport::from_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        rows.extend(part.rows);
        manifest.input(&ctx.run, path)?;
    }
    if rows.is_empty() {
        return Err(CliError::Data("no report rows in the inputs".into()));
    }
    let paths: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_report(ctx, &MetricsReport::new(rows), &mut manifest, &paths)?;
    manifest.write(&ctx.run, &ctx.config)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ids_map_to_cells() {
        let cells = parse_grid("1, 7,9").unwrap();
        assert_eq!(cells[1], (7, AudioEncoderKind::ConformerChar, true, true));
        assert_eq!(cells[2].1, AudioEncoderKind::Ppg);
        assert!(parse_grid("2").is_err());
        assert!(parse_grid("x").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn every_grid_cell_is_a_valid_training_config() {
        for (_, kind, pre, fixed) in GRID {
            let config = TrainConfig {
                audio_encoder: kind,
                pretrained: pre,
                pretrained_path: pre.then(|| PathBuf::from("x")),
                fixed,
                ..TrainConfig::default()
            };
            config.validate().unwrap();
        }
    }
}
