//! Task classifiers over the latent code.
//!
//! A head reshapes `z` into `k` steps of `d_z / k` values, runs a BiLSTM over
//! them, concatenates the forward state after the last step with the backward
//! state after the first step, and maps the result through a dense layer.
//! Two-class tasks use a single sigmoid unit; the rest use softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labels::{event_code, order_events, Detection, Relatedness, Stance, Task, TrackingMode, Veracity};
use crate::layers::Dense;
use crate::seq::{lstm_forward, LstmCell};
use crate::tensor::{sigmoid, Bound, ParamStore, Result, Tape, TensorError, Var};
use crate::text::{DataError, Example};
use crate::vae::argmax;

/// Probability clamp applied before every log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub latent_dim: usize,
    /// Number of BiLSTM steps `k`; must divide `latent_dim`.
    pub steps: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            steps: 8,
            hidden: 32,
            dropout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub task: Task,
    pub classes: Vec<String>,
    pub config: HeadConfig,
    pub params: ParamStore,
    fwd: LstmCell,
    bwd: LstmCell,
    out: Dense,
}

fn check_class_count(task: Task, n: usize) -> Result<()> {
    let ok = match task {
        Task::Detection => n == 2,
        Task::Stance => n == 4,
        Task::Veracity => n == 3,
        Task::Tracking => n >= 2,
    };
    if ok {
        Ok(())
    } else {
        Err(TensorError::Invalid(format!("{task} head cannot have {n} classes")))
    }
}

impl TaskHead {
    pub fn new<R: Rng + ?Sized>(task: Task, classes: Vec<String>, config: HeadConfig, rng: &mut R) -> Result<Self> {
        check_class_count(task, classes.len())?;
        if config.steps == 0 || !config.latent_dim.is_multiple_of(config.steps) {
            return Err(TensorError::Invalid(format!(
                "{} steps do not divide latent dimension {}",
                config.steps, config.latent_dim
            )));
        }
        let step_dim = config.latent_dim / config.steps;
        let h = config.hidden;
        let mut p = ParamStore::new();
        let fwd = LstmCell::new(&mut p, "head.fwd", step_dim, h, rng);
        let bwd = LstmCell::new(&mut p, "head.bwd", step_dim, h, rng);
        let outputs = if classes.len() == 2 { 1 } else { classes.len() };
        let out = Dense::new(&mut p, "head.out", 2 * h, outputs, rng);
        Ok(Self {
            task,
            classes,
            config,
            params: p,
            fwd,
            bwd,
            out,
        })
    }

    /// Head with every parameter zero.
    pub fn zeroed(task: Task, classes: Vec<String>, config: HeadConfig) -> Result<Self> {
        let mut head = Self::new(task, classes, config, &mut ChaCha8Rng::seed_from_u64(0))?;
        for t in head.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(head)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_binary(&self) -> bool {
        self.classes.len() == 2
    }

    pub fn output_layer(&self) -> &Dense {
        &self.out
    }

    pub fn cells(&self) -> (&LstmCell, &LstmCell) {
        (&self.fwd, &self.bwd)
    }

    /// Pre-activation output: one logit for binary heads, else one per class.
    pub fn logits_vars<R: Rng + ?Sized>(&self, tape: &mut Tape<'_>, bound: &Bound, z: Var, rng: &mut R) -> Result<Var> {
        let d = self.config.latent_dim;
        if tape.shape(z) != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "head z",
                left: vec![d],
                right: tape.shape(z).to_vec(),
            });
        }
        let step_dim = d / self.config.steps;
        let steps = (0..self.config.steps)
            .map(|i| tape.slice(z, i * step_dim, step_dim))
            .collect::<Result<Vec<_>>>()?;
        let forward = lstm_forward(tape, &self.fwd, bound, &steps)?;
        let reversed: Vec<Var> = steps.iter().rev().copied().collect();
        let backward = lstm_forward(tape, &self.bwd, bound, &reversed)?;
        let f = forward.last().expect("k >= 1").h;
        let b = backward.last().expect("k >= 1").h;
        let feat = tape.concat(&[f, b])?;
        let feat = tape.dropout(feat, self.config.dropout, rng);
        self.out.forward(tape, bound, feat)
    }

    /// Probability of the positive class (binary) or the class distribution.
    pub fn probs_vars<R: Rng + ?Sized>(&self, tape: &mut Tape<'_>, bound: &Bound, z: Var, rng: &mut R) -> Result<Var> {
        let logits = self.logits_vars(tape, bound, z, rng)?;
        Ok(if self.is_binary() {
            tape.sigmoid(logits)
        } else {
            tape.softmax(logits)
        })
    }

    /// Per-example task loss, scaled by `weight`.
    pub fn loss_vars<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        bound: &Bound,
        z: Var,
        label: usize,
        weight: f64,
        rng: &mut R,
    ) -> Result<Var> {
        if label >= self.num_classes() {
            return Err(TensorError::IndexOutOfRange {
                op: "label",
                index: label,
                len: self.num_classes(),
            });
        }
        let probs = self.probs_vars(tape, bound, z, rng)?;
        let loss = if self.is_binary() {
            binary_ce_var(tape, probs, label)?
        } else {
            categorical_ce_var(tape, probs, label)?
        };
        Ok(if weight == 1.0 { loss } else { tape.scale(loss, weight) })
    }

    /// Evaluation-mode class distribution; binary heads give `[1 − p, p]`.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let logits = self.logits(z)?;
        Ok(distribution_from_logits(&logits, self.is_binary()))
    }

    /// Evaluation-mode pre-activation outputs.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let zv = tape.vector(z.to_vec())?;
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let logits = self.logits_vars(&mut tape, &bound, zv, &mut unused)?;
        Ok(tape.value(logits).to_vec())
    }

    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        Ok(predict_label(&self.forward(z)?))
    }
}

/// Class distribution from head outputs.
pub fn distribution_from_logits(logits: &[f64], binary: bool) -> Vec<f64> {
    if binary {
        let p = sigmoid(logits[0]);
        return vec![1.0 - p, p];
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// `−[y log p + (1 − y) log(1 − p)]`, the target probability clamped below at
/// 1e-7.
pub fn binary_ce(p: f64, y: usize) -> f64 {
    let target = if y == 1 { p } else { 1.0 - p };
    -target.clamp(PROB_EPS, 1.0).ln()
}

/// `−log dist[y]` with the same clamp.
pub fn categorical_ce(dist: &[f64], y: usize) -> Result<f64> {
    let p = *dist.get(y).ok_or(TensorError::IndexOutOfRange {
        op: "categorical_ce",
        index: y,
        len: dist.len(),
    })?;
    Ok(-p.clamp(PROB_EPS, 1.0).ln())
}

/// Argmax with ties to the lowest class index.
pub fn predict_label(dist: &[f64]) -> usize {
    argmax(dist)
}

pub fn binary_ce_var(tape: &mut Tape<'_>, p: Var, y: usize) -> Result<Var> {
    let target = if y == 1 {
        p
    } else {
        let neg = tape.neg(p);
        tape.offset(neg, 1.0)
    };
    let tc = tape.clamp(target, PROB_EPS, 1.0);
    let log = tape.log(tc)?;
    let log = tape.sum(log);
    Ok(tape.neg(log))
}

pub fn categorical_ce_var(tape: &mut Tape<'_>, dist: Var, y: usize) -> Result<Var> {
    let picked = tape.pick(dist, y)?;
    let pc = tape.clamp(picked, PROB_EPS, 1.0);
    let log = tape.log(pc)?;
    Ok(tape.neg(log))
}

/// Inverse-frequency class weights `n / (C · count_c)`; absent classes get 0.
pub fn inverse_frequency_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (n_classes as f64 * c as f64) })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum LabelKind {
    Detection,
    Stance,
    Veracity,
    Events(Vec<String>),
    Related(String),
}

/// Maps examples to integer labels for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    pub task: Task,
    pub classes: Vec<String>,
    kind: LabelKind,
}

impl LabelSpace {
    /// `events` is consulted for tracking only: five-way mode makes one class
    /// per event, binary mode requires the query event to be among them.
    pub fn new(task: Task, tracking: &TrackingMode, events: &[String]) -> std::result::Result<Self, DataError> {
        let (classes, kind) = match task {
            Task::Detection => (Detection::names(), LabelKind::Detection),
            Task::Stance => (Stance::names(), LabelKind::Stance),
            Task::Veracity => (Veracity::names(), LabelKind::Veracity),
            Task::Tracking => match tracking {
                TrackingMode::FiveWay => {
                    let ordered = order_events(events.iter().cloned());
                    if ordered.len() < 2 {
                        return Err(DataError::InvalidArgument(format!(
                            "event tracking needs at least two events, found {}",
                            ordered.len()
                        )));
                    }
                    (ordered.clone(), LabelKind::Events(ordered))
                }
                TrackingMode::Binary { query_event } => {
                    if !events.contains(query_event) {
                        return Err(DataError::UnknownEvent {
                            event: query_event.clone(),
                            available: events.to_vec(),
                        });
                    }
                    (Relatedness::names(), LabelKind::Related(query_event.clone()))
                }
            },
        };
        Ok(Self { task, classes, kind })
    }

    pub fn label(&self, ex: &Example) -> Option<usize> {
        match &self.kind {
            LabelKind::Detection => ex.labels.detection.map(|l| l.index()),
            LabelKind::Stance => ex.labels.stance.map(|l| l.index()),
            LabelKind::Veracity => ex.labels.veracity.map(|l| l.index()),
            LabelKind::Events(events) => events.iter().position(|e| *e == ex.event),
            LabelKind::Related(query) => Some(usize::from(ex.event == *query)),
        }
    }

    /// Report column headers: event codes for five-way tracking, else the
    /// class names.
    pub fn columns(&self) -> Vec<String> {
        match &self.kind {
            LabelKind::Events(events) => events.iter().map(|e| event_code(e).to_string()).collect(),
            _ => self.classes.clone(),
        }
    }

    pub fn is_event_classes(&self) -> bool {
        matches!(self.kind, LabelKind::Events(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::bilstm_run;
    use crate::tensor::grad_check_params;
    use crate::text::Labels;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn small() -> HeadConfig {
        HeadConfig {
            latent_dim: 6,
            steps: 3,
            hidden: 3,
            dropout: 0.0,
        }
    }

    #[test]
    fn zeroed_heads_are_uniform() {
        let h = TaskHead::zeroed(Task::Stance, Stance::names(), HeadConfig::default()).unwrap();
        assert_eq!(h.forward(&[0.3; 32]).unwrap(), vec![0.25; 4]);
        let b = TaskHead::zeroed(Task::Detection, Detection::names(), HeadConfig::default()).unwrap();
        assert_eq!(b.forward(&[0.3; 32]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn class_counts_are_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(TaskHead::new(Task::Stance, names(3), HeadConfig::default(), &mut rng).is_err());
        assert!(TaskHead::new(Task::Veracity, names(2), HeadConfig::default(), &mut rng).is_err());
        assert!(TaskHead::new(Task::Tracking, names(5), HeadConfig::default(), &mut rng).is_ok());
        let bad = HeadConfig {
            steps: 5,
            ..HeadConfig::default()
        };
        assert!(TaskHead::new(Task::Detection, names(2), bad, &mut rng).is_err());
        let single = HeadConfig {
            steps: 1,
            ..HeadConfig::default()
        };
        assert!(TaskHead::new(Task::Detection, names(2), single, &mut rng).is_ok());
    }

    #[test]
    fn rejects_wrong_latent_size() {
        let h = TaskHead::new(Task::Veracity, Veracity::names(), HeadConfig::default(), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert!(h.forward(&[0.0; 31]).is_err());
    }

    #[test]
    fn matches_composition_oracle() {
        let cfg = HeadConfig {
            dropout: 0.0,
            ..HeadConfig::default()
        };
        let h = TaskHead::new(Task::Veracity, Veracity::names(), cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..32).map(|_| rng.random_range(-2.0..2.0)).collect();
        let steps: Vec<Vec<f64>> = z.chunks(4).map(|c| c.to_vec()).collect();
        let (fwd, bwd) = h.cells();
        let per_step = bilstm_run(&h.params, fwd, bwd, &steps).unwrap();
        let feat: Vec<f64> = per_step[7][..32].iter().chain(&per_step[0][32..]).copied().collect();
        let w = h.params.get(h.output_layer().weight).data();
        let b = h.params.get(h.output_layer().bias).data();
        let logits: Vec<f64> = (0..3)
            .map(|r| b[r] + (0..64).map(|c| w[r * 64 + c] * feat[c]).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let total: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let expected: Vec<f64> = logits.iter().map(|l| (l - m).exp() / total).collect();
        let got = h.forward(&z).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_values() {
        assert!((binary_ce(0.5, 0) - 2f64.ln()).abs() < 1e-15);
        assert!((binary_ce(0.5, 1) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(binary_ce(1.0, 1), 0.0);
        assert_eq!(binary_ce(0.0, 0), 0.0);
        assert!((binary_ce(0.9, 0) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!(binary_ce(0.0, 1).is_finite());
        assert_eq!(categorical_ce(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert_eq!(categorical_ce(&[1.0, 0.0], 1).unwrap(), -PROB_EPS.ln());
        assert!((categorical_ce(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((categorical_ce(&[0.7, 0.1, 0.1, 0.1], 0).unwrap() - 0.35667494393873245).abs() < 1e-12);
        assert!(categorical_ce(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn tape_losses_match_value_losses() {
        for &(p, y) in &[(0.3, 0usize), (0.8, 1), (1.0, 1), (0.0, 0)] {
            let mut tape = Tape::new();
            let v = tape.vector(vec![p]).unwrap();
            let l = binary_ce_var(&mut tape, v, y).unwrap();
            assert_eq!(tape.scalar(l), binary_ce(p, y));
        }
        let dist = vec![0.2, 0.5, 0.3];
        let mut tape = Tape::new();
        let v = tape.vector(dist.clone()).unwrap();
        let l = categorical_ce_var(&mut tape, v, 2).unwrap();
        assert_eq!(tape.scalar(l), categorical_ce(&dist, 2).unwrap());
    }

    #[test]
    fn prediction_ties_and_shift() {
        assert_eq!(predict_label(&[0.1, 0.9]), 1);
        assert_eq!(predict_label(&[0.5, 0.5]), 0);
        let logits = [0.3, 1.2, -0.4, 1.1];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 17.5).collect();
        assert_eq!(
            predict_label(&distribution_from_logits(&logits, false)),
            predict_label(&distribution_from_logits(&shifted, false))
        );
    }

    #[test]
    fn head_loss_gradients() {
        for (task, classes, label) in [
            (Task::Detection, Detection::names(), 1),
            (Task::Stance, Stance::names(), 2),
        ] {
            let h = TaskHead::new(task, classes, small(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let z = vec![0.4, -0.2, 0.9, 0.1, -0.7, 0.3];
            let report = grad_check_params(
                &h.params,
                |tape, bound| {
                    let zv = tape.vector(z.clone())?;
                    h.loss_vars(tape, bound, zv, label, 1.0, &mut ChaCha8Rng::seed_from_u64(0))
                },
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{task}: {report:?}");
        }
    }

    #[test]
    fn inverse_frequency() {
        let w = inverse_frequency_weights(&[0, 0, 0, 1], 3);
        assert!((w[0] - 4.0 / 9.0).abs() < 1e-12);
        assert!((w[1] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn label_spaces() {
        let events = vec!["ottawashooting".to_string(), "sydneysiege".to_string()];
        let mut ex = Example::new(
            "1",
            "x",
            "ottawashooting",
            Labels {
                detection: Some(Detection::Rumor),
                stance: None,
                veracity: Some(Veracity::False),
            },
        );
        let five = LabelSpace::new(Task::Tracking, &TrackingMode::FiveWay, &events).unwrap();
        assert_eq!(five.classes, ["sydneysiege", "ottawashooting"]);
        assert_eq!(five.columns(), ["S", "O"]);
        assert_eq!(five.label(&ex), Some(1));
        let bin = LabelSpace::new(
            Task::Tracking,
            &TrackingMode::Binary {
                query_event: "sydneysiege".into(),
            },
            &events,
        )
        .unwrap();
        assert_eq!(bin.label(&ex), Some(Relatedness::Unrelated.index()));
        ex.event = "sydneysiege".into();
        assert_eq!(bin.label(&ex), Some(1));
        let det = LabelSpace::new(Task::Detection, &TrackingMode::FiveWay, &events).unwrap();
        assert_eq!(det.label(&ex), Some(1));
        let st = LabelSpace::new(Task::Stance, &TrackingMode::FiveWay, &events).unwrap();
        assert_eq!(st.label(&ex), None);
        assert!(LabelSpace::new(
            Task::Tracking,
            &TrackingMode::Binary {
                query_event: "nope".into()
            },
            &events
        )
        .is_err());
    }
}
