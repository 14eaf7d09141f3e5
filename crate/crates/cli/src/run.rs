//! Run directory layout and the per-command manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// `corpus/`, `checkpoints/`, `logs/` and `reports/` under one root.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self, file: &str) -> PathBuf {
        self.root.join("corpus").join(file)
    }

    pub fn checkpoints(&self, file: &str) -> PathBuf {
        self.root.join("checkpoints").join(file)
    }

    pub fn logs(&self, file: &str) -> PathBuf {
        self.root.join("logs").join(file)
    }

    pub fn reports(&self, file: &str) -> PathBuf {
        self.root.join("reports").join(file)
    }

    /// Path as recorded in manifests: relative to the root when inside it.
    pub fn label(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut reader = BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Creates parent directories and writes `contents`.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) => std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e)),
        None => Ok(()),
    }
}

/// Refuses to write `output` when it is one of `inputs`.
pub fn ensure_not_input(output: &Path, inputs: &[&Path]) -> Result<()> {
    let Ok(out) = output.canonicalize() else {
        return Ok(());
    };
    for input in inputs {
        if input.canonicalize().is_ok_and(|i| i == out) {
            return Err(CliError::Data(format!(
                "refusing to overwrite input file {}",
                output.display()
            )));
        }
    }
    Ok(())
}

/// Everything needed to repeat a command: its resolved config, seed, and
/// hashes of the files it read and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: config.entries(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, run: &RunDir, path: &Path) -> Result<()> {
        self.inputs.insert(run.label(path), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, run: &RunDir, path: &Path) -> Result<()> {
        self.outputs.insert(run.label(path), sha256_file(path)?);
        Ok(())
    }

    /// Writes `logs/<command>.manifest.json` and the merged config as
    /// `logs/<command>.config`.
    pub fn write(&self, run: &RunDir, config: &RunConfig) -> Result<PathBuf> {
        write_file(&run.logs(&format!("{}.config", self.command)), config.render())?;
        let path = run.logs(&format!("{}.manifest.json", self.command));
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&path, json + "\n")?;
        Ok(path)
    }
}
