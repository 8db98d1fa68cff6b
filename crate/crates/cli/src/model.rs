//! Self-contained model directories: vocabulary, VAE and head weights, and
//! the metadata needed to rebuild them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vroc_core::cotrain::TrainConfig;
use vroc_core::heads::{LabelSpace, TaskHead};
use vroc_core::labels::Task;
use vroc_core::tensor::checkpoint;
use vroc_core::tensor::ParamStore;
use vroc_core::text::Vocabulary;
use vroc_core::vae::Vae;

use crate::manifest::{emit, Manifest};

pub const META: &str = "model.json";
pub const VOCAB: &str = "vocab.txt";
pub const VAE: &str = "vae.ckpt";
pub const HEAD: &str = "head.ckpt";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub run_id: String,
    pub task: Option<Task>,
    pub classes: Vec<String>,
    /// Events the label space was built from.
    pub events: Vec<String>,
    pub config: TrainConfig,
}

pub struct Model {
    pub meta: ModelMeta,
    pub vocab: Vocabulary,
    pub vae: Vae,
    pub head: Option<TaskHead>,
}

impl Model {
    pub fn space(&self) -> Result<LabelSpace> {
        let Some(task) = self.meta.task else {
            bail!("model has no task head");
        };
        let space = LabelSpace::new(task, &self.meta.config.tracking, &self.meta.events)?;
        if space.classes != self.meta.classes {
            bail!("stored classes {:?} do not match label space {:?}", self.meta.classes, space.classes);
        }
        Ok(space)
    }
}

pub fn params_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    checkpoint::write_params(&mut buf, store)?;
    Ok(buf)
}

/// Writes a model directory at `out/rel`.
pub fn save(
    manifest: &mut Manifest,
    out: &Path,
    rel: &str,
    meta: &ModelMeta,
    vocab: &Vocabulary,
    vae: &Vae,
    head: Option<&TaskHead>,
) -> Result<()> {
    let join = |f: &str| if rel.is_empty() { f.to_string() } else { format!("{rel}/{f}") };
    emit(manifest, out, &join(VOCAB), vocab.to_file_string())?;
    emit(manifest, out, &join(VAE), params_bytes(&vae.params)?)?;
    if let Some(h) = head {
        emit(manifest, out, &join(HEAD), params_bytes(&h.params)?)?;
    }
    emit(manifest, out, &join(META), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Resolves `dir` to a model directory, descending into `dir/<task>` when
/// `dir` holds one model per task.
pub fn resolve(dir: &Path, task: Option<Task>) -> Result<PathBuf> {
    if dir.join(META).is_file() {
        return Ok(dir.to_path_buf());
    }
    if let Some(t) = task {
        let sub = dir.join(t.name());
        if sub.join(META).is_file() {
            return Ok(sub);
        }
    }
    bail!("{} is not a model directory (no {META})", dir.display())
}

pub fn load(dir: &Path) -> Result<Model> {
    let read = |f: &str| fs::read(dir.join(f)).with_context(|| format!("reading {}", dir.join(f).display()));
    let meta: ModelMeta = serde_json::from_slice(&read(META)?).context("parsing model metadata")?;
    meta.config.validate()?;
    let vocab_text = String::from_utf8(read(VOCAB)?).context("vocabulary is not UTF-8")?;
    let vocab = Vocabulary::from_file_string(&vocab_text, meta.config.min_freq)?;
    let mut vae = Vae::zeroed(meta.config.vae_config(vocab.len()));
    checkpoint::restore_into(&mut vae.params, checkpoint::read_params(read(VAE)?.as_slice())?)?;
    let head = match meta.task {
        Some(task) => {
            let mut head = TaskHead::new(task, meta.classes.clone(), meta.config.head.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
            checkpoint::restore_into(&mut head.params, checkpoint::read_params(read(HEAD)?.as_slice())?)?;
            Some(head)
        }
        None => None,
    };
    Ok(Model { meta, vocab, vae, head })
}
