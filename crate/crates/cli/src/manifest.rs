//! Run manifest written into every output directory before any training.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use vroc_core::cotrain::TrainConfig;

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub path: PathBuf,
    pub sha256: String,
    pub examples: usize,
    pub skipped_lines: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    /// Hash of command, arguments, config and dataset hash.
    pub run_id: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub dataset: Option<DatasetInfo>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Manifest {
    pub fn new(command: &str, args: &str, config: &TrainConfig, dataset: Option<DatasetInfo>) -> Self {
        let mut key = format!("{command}\n{args}\n{}", config.to_toml_string());
        if let Some(d) = &dataset {
            key.push_str(&d.sha256);
        }
        Self {
            command: command.to_string(),
            run_id: sha256_hex(key.as_bytes())[..16].to_string(),
            seed: config.seed,
            config: config.clone(),
            dataset,
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
            artifacts: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(&mut self, dir: &Path, status: &str) -> Result<()> {
        self.finished_unix = Some(now());
        self.status = status.to_string();
        self.artifacts.sort();
        self.write(dir)
    }
}

/// Writes `contents` under `dir` and records the relative path.
pub fn emit(manifest: &mut Manifest, dir: &Path, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    manifest.artifacts.push(rel.to_string());
    Ok(())
}
