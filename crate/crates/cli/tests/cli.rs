use std::path::Path;
use std::process::{Command, Output};

use prosody_cli::run::{sha256_file, Manifest};

fn prosody(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prosody"))
        .current_dir(dir)
        .env_remove("PROSODY_THREADS")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const SMALL: &str = "gen.n_train = 12\ngen.n_dev = 4\ngen.n_test = 4\n";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.conf"), SMALL).unwrap();
    dir
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = setup();
    for out in ["a", "b"] {
        let o = prosody(dir.path(), &["gen", "--config", "small.conf", "--out", out, "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for split in ["train", "dev", "test"] {
        let a = std::fs::read(dir.path().join(format!("a/corpus/{split}.jsonl"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b/corpus/{split}.jsonl"))).unwrap();
        assert_eq!(a, b, "{split}");
    }
    let c = prosody(dir.path(), &["gen", "--config", "small.conf", "--out", "c", "--seed", "8"]);
    assert_eq!(code(&c), 0);
    assert_ne!(
        std::fs::read(dir.path().join("a/corpus/train.jsonl")).unwrap(),
        std::fs::read(dir.path().join("c/corpus/train.jsonl")).unwrap()
    );
}

#[test]
fn manifest_hashes_and_config_echo() {
    let dir = setup();
    let o = prosody(dir.path(), &["gen", "--config", "small.conf", "--out", "r", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let run = dir.path().join("r");
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(run.join("logs/gen.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, Some(3));
    assert_eq!(manifest.config["gen.n_train"], "12");
    assert_eq!(
        manifest.outputs["corpus/train.jsonl"],
        sha256_file(&run.join("corpus/train.jsonl")).unwrap()
    );
    let echo = std::fs::read_to_string(run.join("logs/gen.config")).unwrap();
    assert!(echo.lines().any(|l| l == "gen.seed = 3"));

    // The echoed config reproduces the corpus on its own.
    let o = prosody(dir.path(), &["gen", "--config", "r/logs/gen.config", "--out", "again"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(run.join("corpus/test.jsonl")).unwrap(),
        std::fs::read(dir.path().join("again/corpus/test.jsonl")).unwrap()
    );
}

#[test]
fn identity_evaluation_scores_one() {
    let dir = setup();
    assert_eq!(code(&prosody(dir.path(), &["gen", "--config", "small.conf", "--out", "r"])), 0);
    let o = prosody(
        dir.path(),
        &["evaluate", "--out", "r", "--ref", "r/corpus/dev.jsonl", "--hyp", "r/corpus/dev.jsonl"],
    );
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("r/reports/report.csv")).unwrap();
    let report = prosody_core::eval::MetricsReport::from_csv(&csv).unwrap();
    for score in report.rows[0].scores.0 {
        if !score.absent {
            assert_eq!((score.precision, score.recall, score.f1), (1.0, 1.0, 1.0));
        }
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("token accuracy 1.0000"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    assert_eq!(code(&prosody(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&prosody(dir.path(), &["gen", "--bogus"])), 1);
    assert_eq!(code(&prosody(dir.path(), &[])), 1);
    assert_eq!(code(&prosody(dir.path(), &["gen", "--preset", "huge"])), 1);
    assert_eq!(code(&prosody(dir.path(), &["gen", "--set", "no-equals"])), 1);
    assert_eq!(code(&prosody(dir.path(), &["--help"])), 0);

    let o = prosody(
        dir.path(),
        &["train", "--set", "model.audio_encoder=none", "--set", "train.fixed=true"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fixed"));
    assert_eq!(code(&prosody(dir.path(), &["gen", "--set", "gen.nope=1"])), 2);
    assert_eq!(code(&prosody(dir.path(), &["gen", "--set", "gen.p_ambig=2"])), 2);
    assert_eq!(code(&prosody(dir.path(), &["train", "--out", "missing"])), 2);
    std::fs::write(dir.path().join("bad.conf"), "gen.n_train: 3\n").unwrap();
    assert_eq!(code(&prosody(dir.path(), &["gen", "--config", "bad.conf"])), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_prosody"))
        .current_dir(dir.path())
        .env("PROSODY_THREADS", "zero")
        .args(["gen", "--config", "small.conf"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn commands_leave_inputs_untouched() {
    let dir = setup();
    let p = dir.path();
    let conf = format!("{SMALL}train.epochs = 1\nmodel.audio_encoder = none\n");
    std::fs::write(p.join("run.conf"), conf).unwrap();
    let steps: [&[&str]; 7] = [
        &["gen", "--config", "run.conf", "--out", "r"],
        &["train", "--config", "run.conf", "--out", "r"],
        &["annotate", "--out", "r"],
        &["evaluate", "--out", "r", "--ref", "r/corpus/test.jsonl", "--hyp", "r/reports/annotations.jsonl"],
        &["kappa", "--out", "r", "--annotations", "r/corpus/test.jsonl", "r/reports/annotations.jsonl"],
        &["absample", "--out", "r", "--ref", "r/corpus/test.jsonl", "--hyp", "r/reports/annotations.jsonl"],
        &["report", "--out", "s", "--inputs", "r/reports/report.csv"],
    ];
    let inputs = ["r/corpus/train.jsonl", "r/corpus/dev.jsonl", "r/corpus/test.jsonl"];
    let mut before = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let o = prosody(p, step);
        assert_eq!(code(&o), 0, "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
        if i == 0 {
            before = inputs.iter().map(|f| sha256_file(&p.join(f)).unwrap()).collect();
        }
    }
    let after: Vec<String> = inputs.iter().map(|f| sha256_file(&p.join(f)).unwrap()).collect();
    assert_eq!(before, after);
    assert!(p.join("r/reports/kappa.csv").exists());
    assert!(p.join("s/reports/report.md").exists());

    let o = prosody(
        p,
        &["annotate", "--out", "r", "--input", "r/corpus/dev.jsonl", "--output", "r/corpus/dev.jsonl"],
    );
    assert_eq!(code(&o), 2);
    assert_eq!(sha256_file(&p.join("r/corpus/dev.jsonl")).unwrap(), before[1]);
}
