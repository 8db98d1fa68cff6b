//! Confusion matrices and classification metrics.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("golds has {golds} labels but preds has {preds}")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    OutOfRange { label: usize, n_classes: usize },
    #[error("no labels to evaluate")]
    Empty,
    #[error("confusion matrix must be square with one row per class")]
    NotSquare,
}

/// Square count matrix indexed `[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        if counts.len() != classes.len() || counts.iter().any(|r| r.len() != classes.len()) {
            return Err(MetricsError::NotSquare);
        }
        Ok(Self { classes, counts })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }
}

pub fn confusion_matrix(golds: &[usize], preds: &[usize], classes: Vec<String>) -> Result<ConfusionMatrix, MetricsError> {
    if golds.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = classes.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (&g, &p) in golds.iter().zip(preds) {
        for label in [g, p] {
            if label >= n {
                return Err(MetricsError::OutOfRange { label, n_classes: n });
            }
        }
        counts[g][p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// How classes with neither gold nor predicted instances enter the macro
/// averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroSupport {
    /// Counted with F1 = 0.
    #[default]
    Zero,
    /// Left out of the macro averages.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// No gold and no predicted instances.
    pub absent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro metrics; every `0/0` resolves to 0.
pub fn compute_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    compute_metrics_with(cm, ZeroSupport::Zero)
}

pub fn compute_metrics_with(cm: &ConfusionMatrix, zero_support: ZeroSupport) -> MetricsReport {
    let n = cm.n_classes();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.counts[c][c];
            let gold: u64 = cm.counts[c].iter().sum();
            let predicted: u64 = cm.counts.iter().map(|r| r[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, gold);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                name: cm.classes[c].clone(),
                precision,
                recall,
                f1,
                support: gold,
                absent: gold == 0 && predicted == 0,
            }
        })
        .collect();
    let counted: Vec<&ClassMetrics> = per_class
        .iter()
        .filter(|m| zero_support == ZeroSupport::Zero || !m.absent)
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if counted.is_empty() {
            0.0
        } else {
            counted.iter().map(|m| f(m)).sum::<f64>() / counted.len() as f64
        }
    };
    MetricsReport {
        accuracy: ratio(cm.trace(), cm.total()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        total: cm.total(),
    }
}

/// Unweighted mean of every metric across reports over the same classes;
/// supports and totals are summed.
pub fn aggregate(reports: &[MetricsReport]) -> Option<MetricsReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let per_class = (0..first.per_class.len())
        .map(|c| ClassMetrics {
            name: first.per_class[c].name.clone(),
            precision: mean(&|r| r.per_class[c].precision),
            recall: mean(&|r| r.per_class[c].recall),
            f1: mean(&|r| r.per_class[c].f1),
            support: reports.iter().map(|r| r.per_class[c].support).sum(),
            absent: reports.iter().all(|r| r.per_class[c].absent),
        })
        .collect();
    Some(MetricsReport {
        accuracy: mean(&|r| r.accuracy),
        macro_precision: mean(&|r| r.macro_precision),
        macro_recall: mean(&|r| r.macro_recall),
        macro_f1: mean(&|r| r.macro_f1),
        per_class,
        total: reports.iter().map(|r| r.total).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn hand_counted_matrix() {
        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], two()).unwrap();
        assert_eq!(cm.counts(), [vec![1, 1], vec![0, 2]]);
        let r = compute_metrics(&cm);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class[1].f1 - 0.8).abs() < 1e-15);
        assert!((r.macro_f1 - 0.733_333_333_333_333_3).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let cm = confusion_matrix(&[0, 1, 2], &[0, 1, 2], vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let r = compute_metrics(&cm);
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 0, 0, 0], two()).unwrap();
        let r = compute_metrics(&cm);
        assert_eq!(r.accuracy, 0.5);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(confusion_matrix(&[], &[], two()), Err(MetricsError::Empty));
        assert!(matches!(
            confusion_matrix(&[0], &[0, 1], two()),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion_matrix(&[0], &[2], two()),
            Err(MetricsError::OutOfRange { label: 2, .. })
        ));
    }

    #[test]
    fn absent_class_convention() {
        let cm = confusion_matrix(&[0, 1], &[0, 1], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let r = compute_metrics(&cm);
        assert!(r.per_class[2].absent);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        let r = compute_metrics_with(&cm, ZeroSupport::Skip);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn aggregate_is_unweighted_mean() {
        let a = compute_metrics(&confusion_matrix(&[0, 1], &[0, 1], two()).unwrap());
        let b = compute_metrics(&confusion_matrix(&[0, 0, 1, 1], &[0, 0, 0, 0], two()).unwrap());
        let agg = aggregate(&[a.clone(), b.clone()]).unwrap();
        assert!((agg.macro_f1 - (a.macro_f1 + b.macro_f1) / 2.0).abs() < 1e-15);
        assert_eq!(agg.total, 6);
        assert!(aggregate(&[]).is_none());
    }
}
