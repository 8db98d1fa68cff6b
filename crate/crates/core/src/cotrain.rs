//! Training: VAE pretraining, per-task co-training, the frozen two-stage
//! baseline and early stopping.
//!
//! Every mode runs through [`Trainer`]: a VAE plus zero or more heads, each
//! with its own Adam state. The per-example objective is
//! `−L^MC + Σ_k λ_k · L_k`, where `L_k` is head k's loss averaged over the
//! Monte Carlo latent samples. Per-example gradients are computed
//! independently (in parallel when enabled) from seeds drawn sequentially off
//! the run generator, then summed in batch order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{compute_metrics_with, confusion_matrix, ZeroSupport};
use crate::heads::{inverse_frequency_weights, HeadConfig, LabelSpace, TaskHead};
use crate::labels::{Task, TrackingMode};
use crate::par;
use crate::tensor::{clip_global_norm, AdamConfig, Bound, OptimizerState, Tape, TensorError};
use crate::text::DataError;
use crate::vae::{standard_normal, Vae, VaeConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Cotrain,
    FrozenBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSettings {
    pub embed_dim: usize,
    pub hidden: usize,
    pub dense_dim: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    pub logvar_bias: f64,
}

impl Default for VaeSettings {
    fn default() -> Self {
        let c = VaeConfig::new(0);
        Self {
            embed_dim: c.embed_dim,
            hidden: c.hidden,
            dense_dim: c.dense_dim,
            latent_dim: c.latent_dim,
            dropout: c.dropout,
            logvar_bias: c.logvar_bias,
        }
    }
}

/// Run configuration. Every field has a default, so a config file only needs
/// the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Co-training epoch cap.
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// The KL weight ramps linearly to 1 over this many pretraining epochs.
    pub kl_anneal_epochs: usize,
    /// Balancing weights in task order detection, tracking, stance, veracity.
    pub lambda: [f64; 4],
    pub mode: TrainMode,
    /// One VAE with all four heads and the summed loss.
    pub joint: bool,
    /// Monte Carlo samples per example.
    pub n_samples: usize,
    pub grad_clip: f64,
    pub class_weighting: bool,
    pub holdout_fraction: f64,
    /// Share of the training part held back for early stopping.
    pub validation_fraction: f64,
    /// Token cap per tweet, BOS and EOS included.
    pub max_len: usize,
    pub min_freq: usize,
    pub tracking: TrackingMode,
    pub zero_support: ZeroSupport,
    pub vae: VaeSettings,
    pub head: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            epochs: 100,
            pretrain_epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: 5,
            kl_anneal_epochs: 10,
            lambda: [1.0; 4],
            mode: TrainMode::Cotrain,
            joint: false,
            n_samples: 1,
            grad_clip: 5.0,
            class_weighting: false,
            holdout_fraction: 0.1,
            validation_fraction: 0.1,
            max_len: 36,
            min_freq: 2,
            tracking: TrackingMode::FiveWay,
            zero_support: ZeroSupport::Zero,
            vae: VaeSettings::default(),
            head: HeadConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return fail(format!("lambda values must be finite and positive, got {:?}", self.lambda));
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if self.batch_size == 0 || self.n_samples == 0 {
            return fail("batch_size and n_samples must be at least 1".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_len < 3 || self.min_freq == 0 {
            return fail("max_len must be at least 3 and min_freq at least 1".into());
        }
        for (name, f) in [
            ("holdout_fraction", self.holdout_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return fail(format!("{name} must be in (0, 1), got {f}"));
            }
        }
        for (name, p) in [("vae.dropout", self.vae.dropout), ("head.dropout", self.head.dropout)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if self.head.latent_dim != self.vae.latent_dim {
            return fail(format!(
                "head.latent_dim {} differs from vae.latent_dim {}",
                self.head.latent_dim, self.vae.latent_dim
            ));
        }
        if self.head.steps == 0 || !self.head.latent_dim.is_multiple_of(self.head.steps) {
            return fail(format!(
                "head.steps {} must divide latent_dim {}",
                self.head.steps, self.head.latent_dim
            ));
        }
        Ok(())
    }

    pub fn lambda_for(&self, task: Task) -> f64 {
        self.lambda[task.index()]
    }

    pub fn vae_config(&self, vocab_size: usize) -> VaeConfig {
        VaeConfig {
            vocab_size,
            embed_dim: self.vae.embed_dim,
            hidden: self.vae.hidden,
            dense_dim: self.vae.dense_dim,
            latent_dim: self.vae.latent_dim,
            dropout: self.vae.dropout,
            logvar_bias: self.vae.logvar_bias,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}

/// An encoded example with one optional label per head.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub tokens: Vec<usize>,
    pub labels: Vec<Option<usize>>,
}

impl Item {
    pub fn new(tokens: Vec<usize>, labels: Vec<Option<usize>>) -> Self {
        Self { tokens, labels }
    }

    pub fn unlabeled(tokens: Vec<usize>) -> Self {
        Self { tokens, labels: vec![] }
    }
}

/// One head's contribution to the objective.
pub struct HeadTerm<'h> {
    pub head: &'h TaskHead,
    pub label: Option<usize>,
    pub lambda: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions {
    /// KL weight inside `−L^MC`.
    pub beta: f64,
    /// Whether VAE parameters receive gradients.
    pub train_vae: bool,
    /// Dropout on.
    pub training: bool,
    pub include_elbo: bool,
    pub include_task: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            beta: 1.0,
            train_vae: true,
            training: false,
            include_elbo: true,
            include_task: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    /// `−L^MC` at full KL weight.
    pub neg_elbo: f64,
    /// Per-head task loss (already class-weighted), `None` when unlabeled.
    pub task: Vec<Option<f64>>,
    /// The differentiated objective.
    pub loss: f64,
    /// Empty when the VAE is frozen.
    pub vae_grads: Vec<Vec<f64>>,
    pub head_grads: Vec<Vec<Vec<f64>>>,
}

/// Per-example objective and its gradients for the given latent draws.
pub fn objective<R: Rng + ?Sized>(
    vae: &Vae,
    heads: &[HeadTerm<'_>],
    tokens: &[usize],
    eps: &[Vec<f64>],
    opts: &ObjectiveOptions,
    rng: &mut R,
) -> Result<ObjectiveValue, TensorError> {
    let mut tape = if opts.training { Tape::training() } else { Tape::new() };
    let vb = vae.params.bind(&mut tape, opts.train_vae);
    let hbs: Vec<Bound> = heads.iter().map(|h| h.head.params.bind(&mut tape, true)).collect();
    let elbo = vae.elbo_vars(&mut tape, &vb, tokens, eps, opts.beta, rng)?;
    let neg_elbo = tape.scalar(elbo.recon) + tape.scalar(elbo.kl);
    let mut terms = Vec::new();
    if opts.include_elbo {
        terms.push(elbo.loss);
    }
    let mut task = Vec::with_capacity(heads.len());
    for (h, hb) in heads.iter().zip(&hbs) {
        let Some(label) = h.label else {
            task.push(None);
            continue;
        };
        let per_sample = elbo
            .z
            .iter()
            .map(|&z| h.head.loss_vars(&mut tape, hb, z, label, h.weight, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let total = tape.add_all(&per_sample)?;
        let mean = tape.scale(total, 1.0 / per_sample.len() as f64);
        task.push(Some(tape.scalar(mean)));
        if opts.include_task {
            terms.push(tape.scale(mean, h.lambda));
        }
    }
    if terms.is_empty() {
        return Err(TensorError::Invalid("objective has no active terms".into()));
    }
    let loss = tape.add_all(&terms)?;
    let loss_value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    let vae_grads = if opts.train_vae {
        vae.params.collect_grads(&tape, &grads, &vb)
    } else {
        Vec::new()
    };
    let head_grads = heads
        .iter()
        .zip(&hbs)
        .map(|(h, hb)| h.head.params.collect_grads(&tape, &grads, hb))
        .collect();
    Ok(ObjectiveValue {
        neg_elbo,
        task,
        loss: loss_value,
        vae_grads,
        head_grads,
    })
}

/// Batch means of the recorded loss components.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub neg_elbo: f64,
    /// Mean per head over the labelled examples in the batch.
    pub task: Vec<Option<f64>>,
    pub loss: f64,
    pub grad_norm: f64,
}

struct BatchGrads {
    outcome: BatchOutcome,
    vae: Vec<Vec<f64>>,
    heads: Vec<Vec<Vec<f64>>>,
}

/// A VAE and its heads with optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub vae: Vae,
    pub heads: Vec<TaskHead>,
    pub lambdas: Vec<f64>,
    /// Per-head class weights; empty means unweighted.
    pub class_weights: Vec<Vec<f64>>,
    pub train_vae: bool,
    pub n_samples: usize,
    pub grad_clip: f64,
    opt_vae: OptimizerState,
    opt_heads: Vec<OptimizerState>,
}

impl Trainer {
    pub fn new(vae: Vae, heads: Vec<TaskHead>, lambdas: Vec<f64>, train_vae: bool, cfg: &TrainConfig) -> Self {
        assert_eq!(heads.len(), lambdas.len(), "one lambda per head");
        let opt_vae = OptimizerState::new(&vae.params, cfg.adam());
        let opt_heads = heads.iter().map(|h| OptimizerState::new(&h.params, cfg.adam())).collect();
        Self {
            vae,
            class_weights: vec![Vec::new(); heads.len()],
            heads,
            lambdas,
            train_vae,
            n_samples: cfg.n_samples,
            grad_clip: cfg.grad_clip,
            opt_vae,
            opt_heads,
        }
    }

    /// Latent draws and dropout for one example come from this generator.
    pub fn example_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn example(&self, item: &Item, seed: u64, beta: f64, training: bool) -> Result<ObjectiveValue, TensorError> {
        let mut rng = Self::example_rng(seed);
        let eps: Vec<Vec<f64>> = (0..self.n_samples)
            .map(|_| standard_normal(self.vae.config.latent_dim, &mut rng))
            .collect();
        let terms: Vec<HeadTerm> = self
            .heads
            .iter()
            .enumerate()
            .map(|(k, head)| {
                let label = item.labels.get(k).copied().flatten();
                let weight = match (label, self.class_weights.get(k)) {
                    (Some(l), Some(w)) if !w.is_empty() => w[l],
                    _ => 1.0,
                };
                HeadTerm {
                    head,
                    label,
                    lambda: self.lambdas[k],
                    weight,
                }
            })
            .collect();
        let opts = ObjectiveOptions {
            beta,
            train_vae: self.train_vae,
            training,
            ..ObjectiveOptions::default()
        };
        objective(&self.vae, &terms, &item.tokens, &eps, &opts, &mut rng)
    }

    fn batch_grads(&self, batch: &[&Item], seeds: &[u64], beta: f64, training: bool) -> Result<BatchGrads, TensorError> {
        assert_eq!(batch.len(), seeds.len(), "one seed per example");
        let jobs: Vec<(&Item, u64)> = batch.iter().copied().zip(seeds.iter().copied()).collect();
        let results = par::map(&jobs, |(item, seed)| self.example(item, *seed, beta, training));
        let n = batch.len() as f64;
        let mut vae = if self.train_vae { self.vae.params.zeros_like() } else { Vec::new() };
        let mut heads: Vec<Vec<Vec<f64>>> = self.heads.iter().map(|h| h.params.zeros_like()).collect();
        let mut neg_elbo = 0.0;
        let mut loss = 0.0;
        let mut task_sum = vec![0.0; self.heads.len()];
        let mut task_n = vec![0usize; self.heads.len()];
        for r in results {
            let r = r?;
            neg_elbo += r.neg_elbo;
            loss += r.loss;
            for (k, t) in r.task.iter().enumerate() {
                if let Some(t) = t {
                    task_sum[k] += t;
                    task_n[k] += 1;
                }
            }
            add_into(&mut vae, &r.vae_grads);
            for (acc, g) in heads.iter_mut().zip(&r.head_grads) {
                add_into(acc, g);
            }
        }
        scale_all(&mut vae, 1.0 / n);
        for h in &mut heads {
            scale_all(h, 1.0 / n);
        }
        let task = task_sum
            .iter()
            .zip(&task_n)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect();
        Ok(BatchGrads {
            outcome: BatchOutcome {
                neg_elbo: neg_elbo / n,
                task,
                loss: loss / n,
                grad_norm: 0.0,
            },
            vae,
            heads,
        })
    }

    /// Loss components of a batch without updating anything.
    pub fn batch_objective(&self, batch: &[&Item], seeds: &[u64], beta: f64, training: bool) -> Result<BatchOutcome, TensorError> {
        Ok(self.batch_grads(batch, seeds, beta, training)?.outcome)
    }

    /// One optimizer step on a batch in training mode. The returned losses
    /// are those of the parameters before the update.
    pub fn step(&mut self, batch: &[&Item], seeds: &[u64], beta: f64) -> Result<BatchOutcome, TensorError> {
        let BatchGrads {
            mut outcome,
            mut vae,
            mut heads,
        } = self.batch_grads(batch, seeds, beta, true)?;
        if !outcome.loss.is_finite() {
            return Ok(outcome);
        }
        let mut groups: Vec<&mut Vec<Vec<f64>>> = Vec::with_capacity(heads.len() + 1);
        if self.train_vae {
            groups.push(&mut vae);
        }
        groups.extend(heads.iter_mut());
        outcome.grad_norm = if self.grad_clip > 0.0 {
            clip_global_norm(&mut groups, self.grad_clip)
        } else {
            clip_global_norm(&mut groups, f64::INFINITY)
        };
        if self.train_vae {
            let report = self.opt_vae.step(&mut self.vae.params, &vae)?;
            warn_skipped("vae", &report.skipped);
        }
        for ((head, opt), g) in self.heads.iter_mut().zip(&mut self.opt_heads).zip(&heads) {
            let report = opt.step(&mut head.params, g)?;
            warn_skipped(head.task.name(), &report.skipped);
        }
        Ok(outcome)
    }
}

fn warn_skipped(what: &str, skipped: &[usize]) {
    if !skipped.is_empty() {
        log::warn!("{what}: skipped update of {} tensors with non-finite gradients", skipped.len());
    }
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, g) in acc.iter_mut().zip(g) {
        for (a, g) in a.iter_mut().zip(g) {
            *a += g;
        }
    }
}

fn scale_all(groups: &mut [Vec<f64>], c: f64) {
    for g in groups {
        for v in g {
            *v *= c;
        }
    }
}

/// Early-stopping decision over a validation metric to maximise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    /// First epoch holding the maximum.
    pub best_epoch: usize,
}

/// Stops once `patience` epochs have passed without beating the best value.
/// NaN values never count as improvements.
pub fn early_stop_check(history: &[f64], patience: usize) -> StopDecision {
    let mut best_epoch = 0;
    for (i, &v) in history.iter().enumerate() {
        if v > history[best_epoch] || (history[best_epoch].is_nan() && !v.is_nan()) {
            best_epoch = i;
        }
    }
    let stop = !history.is_empty() && history.len() - 1 - best_epoch >= patience.max(1);
    StopDecision { stop, best_epoch }
}

/// KL weight for a 0-based pretraining epoch.
pub fn kl_weight(epoch: usize, anneal_epochs: usize) -> f64 {
    if anneal_epochs == 0 {
        1.0
    } else {
        ((epoch + 1) as f64 / anneal_epochs as f64).min(1.0)
    }
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Evaluation-mode mean `−L^MC` with per-example draws seeded from `seed`.
pub fn mean_neg_elbo(vae: &Vae, items: &[Item], n_samples: usize, seed: u64) -> Result<f64, TensorError> {
    if items.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(&Item, u64)> = items.iter().map(|it| (it, rng.random())).collect();
    let values = par::map(&jobs, |(item, s)| {
        let mut r = Trainer::example_rng(*s);
        vae.elbo_mc(&item.tokens, n_samples, &mut r).map(|e| e.loss)
    });
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / items.len() as f64)
}

/// Class predictions from the posterior mean.
pub fn predict_items(vae: &Vae, head: &TaskHead, items: &[&Item]) -> Result<Vec<usize>, TensorError> {
    par::map(items, |item| {
        let (mu, _) = vae.encode(&item.tokens)?;
        head.predict(&mu)
    })
    .into_iter()
    .collect()
}

/// Class distributions from the posterior mean.
pub fn predict_distributions(vae: &Vae, head: &TaskHead, items: &[&Item]) -> Result<Vec<Vec<f64>>, TensorError> {
    par::map(items, |item| {
        let (mu, _) = vae.encode(&item.tokens)?;
        head.forward(&mu)
    })
    .into_iter()
    .collect()
}

fn macro_f1(vae: &Vae, head: &TaskHead, items: &[Item], k: usize, zero: ZeroSupport) -> Result<Option<f64>, TrainError> {
    let labelled: Vec<&Item> = items.iter().filter(|i| i.labels.get(k).copied().flatten().is_some()).collect();
    if labelled.is_empty() {
        return Ok(None);
    }
    let golds: Vec<usize> = labelled.iter().map(|i| i.labels[k].unwrap()).collect();
    let preds = predict_items(vae, head, &labelled)?;
    let cm = confusion_matrix(&golds, &preds, head.classes.clone())
        .map_err(|e| TrainError::Config(e.to_string()))?;
    Ok(Some(compute_metrics_with(&cm, zero).macro_f1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub kl_weight: f64,
    pub train_neg_elbo: f64,
    pub val_neg_elbo: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub vae: Vae,
    pub history: Vec<PretrainEpoch>,
    pub best_epoch: Option<usize>,
}

/// Minimises `−L^MC` alone with KL annealing. Once annealing is complete the
/// epoch with the best validation ELBO is kept and early stopping applies;
/// without a validation set, or if annealing never completes, the final
/// parameters are returned.
pub fn pretrain_vae(vae: Vae, train: &[Item], val: &[Item], cfg: &TrainConfig) -> Result<Pretrained, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DataError::EmptySplit("pretraining set is empty".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval_seed: u64 = rng.random();
    let mut trainer = Trainer::new(vae, Vec::new(), Vec::new(), true, cfg);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vae)> = None;
    let mut monitored = Vec::new();
    for epoch in 0..cfg.pretrain_epochs {
        let beta = kl_weight(epoch, cfg.kl_anneal_epochs);
        let mut sum = 0.0;
        for (b, idx) in shuffled_batches(train.len(), cfg.batch_size, &mut rng).iter().enumerate() {
            let batch: Vec<&Item> = idx.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = idx.iter().map(|_| rng.random()).collect();
            let out = trainer.step(&batch, &seeds, beta)?;
            if !out.loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b });
            }
            sum += out.neg_elbo * batch.len() as f64;
        }
        let train_neg_elbo = sum / train.len() as f64;
        let val_neg_elbo = if val.is_empty() {
            train_neg_elbo
        } else {
            mean_neg_elbo(&trainer.vae, val, cfg.n_samples, eval_seed)?
        };
        log::info!("pretrain epoch {epoch}: beta {beta:.2} train {train_neg_elbo:.4} val {val_neg_elbo:.4}");
        history.push(PretrainEpoch {
            epoch,
            kl_weight: beta,
            train_neg_elbo,
            val_neg_elbo,
        });
        if epoch + 1 >= cfg.kl_anneal_epochs && !val.is_empty() {
            if best.as_ref().is_none_or(|(v, _, _)| val_neg_elbo < *v) {
                best = Some((val_neg_elbo, epoch, trainer.vae.clone()));
            }
            monitored.push(-val_neg_elbo);
            if early_stop_check(&monitored, cfg.patience).stop {
                break;
            }
        }
    }
    Ok(match best {
        Some((_, epoch, vae)) => Pretrained {
            vae,
            history,
            best_epoch: Some(epoch),
        },
        None => Pretrained {
            vae: trainer.vae,
            history,
            best_epoch: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training `−L^MC`.
    pub neg_elbo: f64,
    /// Mean training task loss per head.
    pub task_loss: Vec<f64>,
    /// Validation macro-F1 per head.
    pub val_macro_f1: Vec<f64>,
}

/// Result of a co-training, frozen-baseline or joint run.
#[derive(Debug, Clone)]
pub struct TrainedSet {
    pub mode: TrainMode,
    pub vae: Vae,
    pub heads: Vec<TaskHead>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainedSet {
    pub fn head(&self) -> &TaskHead {
        &self.heads[0]
    }
}

/// Co-trains a copy of `vae` with a fresh head for one task.
pub fn cotrain_set(vae: &Vae, space: &LabelSpace, train: &[Item], val: &[Item], cfg: &TrainConfig) -> Result<TrainedSet, TrainError> {
    fit(vae, std::slice::from_ref(space), train, val, cfg, TrainMode::Cotrain)
}

/// Trains only a fresh head on the frozen `vae`.
pub fn train_frozen_baseline(
    vae: &Vae,
    space: &LabelSpace,
    train: &[Item],
    val: &[Item],
    cfg: &TrainConfig,
) -> Result<TrainedSet, TrainError> {
    fit(vae, std::slice::from_ref(space), train, val, cfg, TrainMode::FrozenBaseline)
}

/// One VAE with a head per label space and the summed weighted loss. Items
/// carry one label slot per space, in order.
pub fn cotrain_joint(
    vae: &Vae,
    spaces: &[LabelSpace],
    train: &[Item],
    val: &[Item],
    cfg: &TrainConfig,
) -> Result<TrainedSet, TrainError> {
    fit(vae, spaces, train, val, cfg, cfg.mode)
}

/// Dispatches on `cfg.mode`.
pub fn train_set(vae: &Vae, space: &LabelSpace, train: &[Item], val: &[Item], cfg: &TrainConfig) -> Result<TrainedSet, TrainError> {
    fit(vae, std::slice::from_ref(space), train, val, cfg, cfg.mode)
}

fn fit(
    vae: &Vae,
    spaces: &[LabelSpace],
    train: &[Item],
    val: &[Item],
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainedSet, TrainError> {
    cfg.validate()?;
    if spaces.is_empty() {
        return Err(TrainError::Config("no task to train".into()));
    }
    let train: Vec<&Item> = train
        .iter()
        .filter(|i| (0..spaces.len()).any(|k| i.labels.get(k).copied().flatten().is_some()))
        .collect();
    for (k, s) in spaces.iter().enumerate() {
        if !train.iter().any(|i| i.labels.get(k).copied().flatten().is_some()) {
            return Err(DataError::MissingLabels(s.task.name().into()).into());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + spaces.iter().map(|s| 1u64 << s.task.index()).sum::<u64>());
    let heads = spaces
        .iter()
        .map(|s| TaskHead::new(s.task, s.classes.clone(), cfg.head.clone(), &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let lambdas = spaces.iter().map(|s| cfg.lambda_for(s.task)).collect();
    let mut trainer = Trainer::new(vae.clone(), heads, lambdas, mode == TrainMode::Cotrain, cfg);
    if cfg.class_weighting {
        trainer.class_weights = spaces
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let labels: Vec<usize> = train.iter().filter_map(|i| i.labels.get(k).copied().flatten()).collect();
                inverse_frequency_weights(&labels, s.classes.len())
            })
            .collect();
    }
    let monitor: Vec<Item> = if val.iter().any(|i| i.labels.iter().any(Option::is_some)) {
        val.to_vec()
    } else {
        log::warn!("no labelled validation examples; early stopping monitors the training set");
        train.iter().map(|i| (*i).clone()).collect()
    };

    let mut history = Vec::new();
    let mut scores = Vec::new();
    let mut best: Option<(Vae, Vec<TaskHead>)> = None;
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let mut elbo_sum = 0.0;
        let mut task_sum = vec![0.0; spaces.len()];
        let mut task_n = vec![0.0; spaces.len()];
        for (b, idx) in shuffled_batches(train.len(), cfg.batch_size, &mut rng).iter().enumerate() {
            let batch: Vec<&Item> = idx.iter().map(|&i| train[i]).collect();
            let seeds: Vec<u64> = idx.iter().map(|_| rng.random()).collect();
            let out = trainer.step(&batch, &seeds, 1.0)?;
            if !out.loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b });
            }
            elbo_sum += out.neg_elbo * batch.len() as f64;
            for (k, t) in out.task.iter().enumerate() {
                if let Some(t) = t {
                    let c = batch.iter().filter(|i| i.labels.get(k).copied().flatten().is_some()).count() as f64;
                    task_sum[k] += t * c;
                    task_n[k] += c;
                }
            }
        }
        let mut val_f1 = Vec::with_capacity(spaces.len());
        for (k, head) in trainer.heads.iter().enumerate() {
            val_f1.push(macro_f1(&trainer.vae, head, &monitor, k, cfg.zero_support)?.unwrap_or(f64::NAN));
        }
        let present: Vec<f64> = val_f1.iter().copied().filter(|v| !v.is_nan()).collect();
        let score = present.iter().sum::<f64>() / present.len().max(1) as f64;
        let record = EpochRecord {
            epoch,
            neg_elbo: elbo_sum / train.len() as f64,
            task_loss: task_sum.iter().zip(&task_n).map(|(s, n)| s / n).collect(),
            val_macro_f1: val_f1,
        };
        log::info!(
            "epoch {epoch}: -elbo {:.4} task {:?} val f1 {:?}",
            record.neg_elbo,
            record.task_loss,
            record.val_macro_f1
        );
        history.push(record);
        scores.push(score);
        let decision = early_stop_check(&scores, cfg.patience);
        if decision.best_epoch == epoch {
            best = Some((trainer.vae.clone(), trainer.heads.clone()));
        }
        if decision.stop {
            stopped_early = true;
            break;
        }
    }
    let best_epoch = early_stop_check(&scores, cfg.patience).best_epoch;
    let (vae, heads) = best.unwrap_or((trainer.vae, trainer.heads));
    Ok(TrainedSet {
        mode,
        vae,
        heads,
        history,
        best_epoch,
        stopped_early,
    })
}

/// `epoch, neg_elbo, l_task, val_macro_f1` rows; joint runs add one task and
/// F1 column per head. Values use shortest round-trip formatting.
pub fn history_tsv(set: &TrainedSet) -> String {
    let mut out = String::from("epoch\tneg_elbo");
    if set.heads.len() == 1 {
        out.push_str("\tl_task\tval_macro_f1\n");
    } else {
        for h in &set.heads {
            out.push_str(&format!("\tl_{}", h.task.name()));
        }
        for h in &set.heads {
            out.push_str(&format!("\tval_macro_f1_{}", h.task.name()));
        }
        out.push('\n');
    }
    for r in &set.history {
        out.push_str(&format!("{}\t{}", r.epoch, r.neg_elbo));
        for v in r.task_loss.iter().chain(&r.val_macro_f1) {
            out.push_str(&format!("\t{v}"));
        }
        out.push('\n');
    }
    out
}

/// `epoch, kl_weight, train_neg_elbo, val_neg_elbo` rows.
pub fn pretrain_history_tsv(history: &[PretrainEpoch]) -> String {
    let mut out = String::from("epoch\tkl_weight\ttrain_neg_elbo\tval_neg_elbo\n");
    for r in history {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.epoch, r.kl_weight, r.train_neg_elbo, r.val_neg_elbo
        ));
    }
    out
}
