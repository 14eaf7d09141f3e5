//! The `prosody` command line: corpus generation, encoder pre-training,
//! annotator training, annotation, evaluation and agreement statistics, each
//! writing into a run directory with a reproducibility manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use prosody_model::AudioEncoderKind;

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::run::RunDir;

#[derive(Debug, Parser)]
#[command(name = "prosody", version, about = "Prosodic boundary annotation from text and speech features")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Sets gen.seed, train.seed and eval.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Network size preset.
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    pub preset: Option<String>,
    /// Overrides one config key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize train/dev/test corpora into corpus/.
    Gen,
    /// Pre-train an audio encoder.
    Pretrain {
        /// Training corpus [default: <out>/corpus/train.jsonl]
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Encoder to pre-train [default: model.audio_encoder]
        #[arg(long, value_parser = ["cnn_char", "conformer_char", "ppg"])]
        encoder: Option<String>,
    },
    /// Train the annotator.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Pre-trained audio encoder checkpoint; implies train.pretrained.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Label a corpus with a trained model.
    Annotate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Precision, recall and F1 of a hypothesis against a reference.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "hyp")]
        hypothesis: PathBuf,
        /// Model name in the report.
        #[arg(long)]
        name: Option<String>,
    },
    /// Fleiss and pairwise Cohen kappa between annotation files.
    Kappa {
        #[arg(long, num_args = 2.., required = true)]
        annotations: Vec<PathBuf>,
    },
    /// Sample utterances where two annotations differ.
    Absample {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "hyp")]
        hypothesis: PathBuf,
        /// Sample size [default: eval.absample_n]
        #[arg(long)]
        n: Option<usize>,
    },
    /// Pre-train, train and test every row of eval.grid.
    Ablate {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Merge report CSVs into one results grid.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn build_config(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &common.config {
        config.merge_file(path)?;
    }
    if let Some(preset) = &common.preset {
        config.set("model.preset", preset)?;
    }
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    for pair in &common.overrides {
        config.set_pair(pair)?;
    }
    Ok(config)
}

/// Caps the worker pool at `PROSODY_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("PROSODY_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("PROSODY_THREADS must be a positive integer, found `{value}`")))?;
    #[cfg(feature = "parallel")]
    {
        // Fails only when a pool already exists, which keeps the earlier cap.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut config = build_config(&cli.common)?;
    let resolved = config.resolve()?;
    configure_threads()?;
    let ctx = Context {
        run: RunDir::new(&cli.common.out),
        config,
        resolved,
    };
    match cli.command {
        Command::Gen => commands::gen(&ctx),
        Command::Pretrain { corpus, encoder } => {
            let kind = encoder.map(|e| e.parse::<AudioEncoderKind>()).transpose()?;
            commands::pretrain_cmd(&ctx, corpus, kind)
        }
        Command::Train { train, dev, pretrained } => commands::train_cmd(&ctx, train, dev, pretrained),
        Command::Annotate { model, input, output } => commands::annotate(&ctx, model, input, output),
        Command::Evaluate {
            reference,
            hypothesis,
            name,
        } => commands::evaluate_cmd(&ctx, &reference, &hypothesis, name),
        Command::Kappa { annotations } => commands::kappa(&ctx, &annotations),
        Command::Absample { reference, hypothesis, n } => commands::absample(&ctx, &reference, &hypothesis, n),
        Command::Ablate { train, dev, test } => commands::ablate(&ctx, train, dev, test),
        Command::Report { inputs } => commands::report(&ctx, &inputs),
    }
}
