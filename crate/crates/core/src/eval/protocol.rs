//! Holdout and leave-one-event-out protocols.
//!
//! Each fold builds its vocabulary on the training part, carves a stratified
//! validation split off it for early stopping, pretrains one VAE on all
//! training tweets and trains one set per requested task from that shared
//! initialisation. The test part is only used for the final report.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{aggregate, compute_metrics_with, confusion_matrix, ConfusionMatrix, MetricsReport, ZeroSupport};
use crate::cotrain::{cotrain_joint, predict_items, pretrain_vae, train_set, Item, Pretrained, TrainConfig, TrainError, TrainedSet};
use crate::heads::LabelSpace;
use crate::labels::{order_events, Task, TrackingMode};
use crate::par;
use crate::text::{split_holdout, split_leave_one_out, DataError, Dataset, Example, Vocabulary};
use crate::vae::Vae;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Protocol {
    Holdout,
    LeaveOneOut { event: String },
    LeaveOneOutAll,
}

impl Protocol {
    /// Parses `holdout`, `loo` or `loo-all`; `loo` needs the held-out event.
    pub fn parse(name: &str, event: Option<&str>) -> Result<Self, DataError> {
        match (name, event) {
            ("holdout", _) => Ok(Protocol::Holdout),
            ("loo", Some(e)) => Ok(Protocol::LeaveOneOut { event: e.to_string() }),
            ("loo", None) => Err(DataError::InvalidArgument(
                "protocol loo needs a held-out event".into(),
            )),
            ("loo-all", _) => Ok(Protocol::LeaveOneOutAll),
            (other, _) => Err(DataError::InvalidArgument(format!(
                "unknown protocol {other:?} (expected holdout, loo or loo-all)"
            ))),
        }
    }

    pub fn is_leave_one_out(&self) -> bool {
        !matches!(self, Protocol::Holdout)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Holdout => f.write_str("holdout"),
            Protocol::LeaveOneOut { event } => write!(f, "loo:{event}"),
            Protocol::LeaveOneOutAll => f.write_str("loo-all"),
        }
    }
}

impl FromStr for Protocol {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("loo", e)) => Protocol::parse("loo", Some(e)),
            _ => Protocol::parse(s, None),
        }
    }
}

/// Rejects protocol and task combinations that cannot be evaluated.
pub fn check_protocol(task: Task, protocol: &Protocol, tracking: &TrackingMode) -> Result<(), DataError> {
    if task == Task::Tracking && protocol.is_leave_one_out() && *tracking == TrackingMode::FiveWay {
        return Err(DataError::InvalidArgument(
            "leave-one-out is not applicable to event tracking: the held-out event would be a class never seen in training"
                .into(),
        ));
    }
    Ok(())
}

/// Token ids plus one label slot per space.
pub fn encode_items(examples: &[Example], vocab: &Vocabulary, spaces: &[LabelSpace], max_len: usize) -> Vec<Item> {
    examples
        .iter()
        .map(|ex| Item::new(vocab.encode(&ex.tokens, max_len), spaces.iter().map(|s| s.label(ex)).collect()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TaskFold {
    pub task: Task,
    pub trained: TrainedSet,
    /// Head index inside `trained`.
    pub head: usize,
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    /// `holdout` or the held-out event.
    pub label: String,
    pub vocab: Vocabulary,
    pub pretrained: Pretrained,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub tasks: Vec<TaskFold>,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub protocol: Protocol,
    pub spaces: Vec<LabelSpace>,
    pub folds: Vec<FoldResult>,
}

impl ProtocolOutcome {
    pub fn space(&self, task: Task) -> Option<&LabelSpace> {
        self.spaces.iter().find(|s| s.task == task)
    }

    /// `(fold label, report)` for one task.
    pub fn reports(&self, task: Task) -> Vec<(String, &MetricsReport)> {
        self.folds
            .iter()
            .filter_map(|f| f.tasks.iter().find(|t| t.task == task).map(|t| (f.label.clone(), &t.report)))
            .collect()
    }

    /// Unweighted mean over folds for leave-one-out protocols.
    pub fn aggregate(&self, task: Task) -> Option<MetricsReport> {
        if !self.protocol.is_leave_one_out() {
            return None;
        }
        let reports: Vec<MetricsReport> = self.reports(task).into_iter().map(|(_, r)| r.clone()).collect();
        aggregate(&reports)
    }
}

/// Runs `protocol` for every task in `tasks`, sharing splits, vocabulary and
/// the pretrained VAE within each fold.
pub fn run_protocol(dataset: &Dataset, tasks: &[Task], protocol: &Protocol, cfg: &TrainConfig) -> Result<ProtocolOutcome, TrainError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(DataError::InvalidArgument("no task requested".into()).into());
    }
    for &t in tasks {
        check_protocol(t, protocol, &cfg.tracking)?;
    }
    let events = order_events(dataset.events());
    let spaces = tasks
        .iter()
        .map(|&t| LabelSpace::new(t, &cfg.tracking, &events))
        .collect::<Result<Vec<_>, _>>()?;
    for s in &spaces {
        if !dataset.examples().iter().any(|e| s.label(e).is_some()) {
            return Err(DataError::MissingLabels(s.task.name().into()).into());
        }
    }
    let stratum = |ex: &Example| {
        if spaces.len() == 1 {
            spaces[0].label(ex)
        } else {
            events.iter().position(|e| *e == ex.event)
        }
    };
    let folds: Vec<(String, Dataset, Dataset)> = match protocol {
        Protocol::Holdout => {
            let (train, test) = split_holdout(dataset, cfg.holdout_fraction, cfg.seed, stratum)?;
            vec![("holdout".to_string(), train, test)]
        }
        Protocol::LeaveOneOut { event } => {
            let (train, test) = split_leave_one_out(dataset, event)?;
            vec![(event.clone(), train, test)]
        }
        Protocol::LeaveOneOutAll => events
            .iter()
            .map(|e| split_leave_one_out(dataset, e).map(|(tr, te)| (e.clone(), tr, te)))
            .collect::<Result<_, _>>()?,
    };
    let mut results = Vec::with_capacity(folds.len());
    for (label, train, test) in folds {
        log::info!("fold {label}: {} train, {} test", train.len(), test.len());
        results.push(run_fold(label, &train, &test, &spaces, stratum, cfg)?);
    }
    Ok(ProtocolOutcome {
        protocol: protocol.clone(),
        spaces,
        folds: results,
    })
}

fn run_fold(
    label: String,
    train: &Dataset,
    test: &Dataset,
    spaces: &[LabelSpace],
    stratum: impl Fn(&Example) -> Option<usize>,
    cfg: &TrainConfig,
) -> Result<FoldResult, TrainError> {
    let (fit, val) = split_holdout(train, cfg.validation_fraction, cfg.seed.wrapping_add(1), stratum)?;
    let vocab = Vocabulary::build(fit.examples().iter().map(|e| e.tokens.as_slice()), cfg.min_freq)?;
    let fit_items = encode_items(fit.examples(), &vocab, spaces, cfg.max_len);
    let val_items = encode_items(val.examples(), &vocab, spaces, cfg.max_len);
    let test_items = encode_items(test.examples(), &vocab, spaces, cfg.max_len);

    let init = Vae::new(cfg.vae_config(vocab.len()), &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let pretrained = pretrain_vae(init, &fit_items, &val_items, cfg)?;

    let trained: Vec<(TrainedSet, usize)> = if cfg.joint {
        let set = cotrain_joint(&pretrained.vae, spaces, &fit_items, &val_items, cfg)?;
        (0..spaces.len()).map(|k| (set.clone(), k)).collect()
    } else {
        let jobs: Vec<usize> = (0..spaces.len()).collect();
        par::map(&jobs, |&k| {
            let project = |items: &[Item]| -> Vec<Item> {
                items
                    .iter()
                    .map(|i| Item::new(i.tokens.clone(), vec![i.labels[k]]))
                    .collect()
            };
            train_set(&pretrained.vae, &spaces[k], &project(&fit_items), &project(&val_items), cfg).map(|s| (s, 0))
        })
        .into_iter()
        .collect::<Result<_, _>>()?
    };

    let mut tasks = Vec::with_capacity(spaces.len());
    for (k, (set, head)) in trained.into_iter().enumerate() {
        let (confusion, report) = evaluate_items(&set, head, &test_items, k, cfg.zero_support)
            .map_err(|e| match e {
                TrainError::Data(DataError::EmptySplit(_)) => {
                    DataError::EmptySplit(format!("no {} labels in test fold {label}", spaces[k].task)).into()
                }
                other => other,
            })?;
        tasks.push(TaskFold {
            task: spaces[k].task,
            trained: set,
            head,
            confusion,
            report,
        });
    }
    Ok(FoldResult {
        label,
        vocab,
        pretrained,
        train_size: fit.len(),
        val_size: val.len(),
        test_size: test.len(),
        tasks,
    })
}

/// Confusion matrix and metrics of head `head` of `set` on the items whose
/// label slot `slot` is filled, predicting from the posterior mean.
pub fn evaluate_items(
    set: &TrainedSet,
    head: usize,
    items: &[Item],
    slot: usize,
    zero_support: ZeroSupport,
) -> Result<(ConfusionMatrix, MetricsReport), TrainError> {
    let labelled: Vec<&Item> = items.iter().filter(|i| i.labels.get(slot).copied().flatten().is_some()).collect();
    if labelled.is_empty() {
        return Err(DataError::EmptySplit("no labelled examples to evaluate".into()).into());
    }
    let golds: Vec<usize> = labelled.iter().map(|i| i.labels[slot].unwrap()).collect();
    let preds = predict_items(&set.vae, &set.heads[head], &labelled)?;
    let classes = set.heads[head].classes.clone();
    let confusion = confusion_matrix(&golds, &preds, classes).map_err(|e| TrainError::Config(e.to_string()))?;
    let report = compute_metrics_with(&confusion, zero_support);
    Ok((confusion, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cotrain::VaeSettings;
    use crate::heads::HeadConfig;
    use crate::labels::Detection;
    use crate::text::Labels;

    fn toy() -> Dataset {
        let events = ["ferguson", "sydneysiege", "charliehebdo"];
        Dataset::new(
            (0..36)
                .map(|i| {
                    let rumor = i % 2 == 0;
                    let text = if rumor { "breaking claim unconfirmed" } else { "weather is nice today" };
                    Example::new(
                        format!("{i}"),
                        text,
                        events[i % 3],
                        Labels {
                            detection: Some(if rumor { Detection::Rumor } else { Detection::Nonrumor }),
                            ..Labels::default()
                        },
                    )
                })
                .collect(),
        )
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            pretrain_epochs: 1,
            batch_size: 8,
            min_freq: 1,
            vae: VaeSettings {
                embed_dim: 4,
                hidden: 4,
                dense_dim: 4,
                latent_dim: 4,
                dropout: 0.0,
                logvar_bias: 0.0,
            },
            head: HeadConfig {
                latent_dim: 4,
                steps: 2,
                hidden: 3,
                dropout: 0.0,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!("holdout".parse::<Protocol>().unwrap(), Protocol::Holdout);
        assert_eq!(
            "loo:ferguson".parse::<Protocol>().unwrap(),
            Protocol::LeaveOneOut {
                event: "ferguson".into()
            }
        );
        assert!(Protocol::parse("loo", None).is_err());
        assert!(Protocol::parse("kfold", None).is_err());
    }

    #[test]
    fn five_way_tracking_rejects_leave_one_out() {
        let err = check_protocol(Task::Tracking, &Protocol::LeaveOneOutAll, &TrackingMode::FiveWay).unwrap_err();
        assert!(err.to_string().contains("not applicable"));
        assert!(check_protocol(Task::Tracking, &Protocol::Holdout, &TrackingMode::FiveWay).is_ok());
        let binary = TrackingMode::Binary {
            query_event: "ferguson".into(),
        };
        assert!(check_protocol(Task::Tracking, &Protocol::LeaveOneOutAll, &binary).is_ok());
    }

    #[test]
    fn loo_all_gives_one_report_per_event_and_mean() {
        let out = run_protocol(&toy(), &[Task::Detection], &Protocol::LeaveOneOutAll, &cfg()).unwrap();
        let reports = out.reports(Task::Detection);
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[0].0, "sydneysiege");
        let agg = out.aggregate(Task::Detection).unwrap();
        let mean = reports.iter().map(|(_, r)| r.macro_f1).sum::<f64>() / 3.0;
        assert!((agg.macro_f1 - mean).abs() < 1e-12);
    }

    #[test]
    fn holdout_is_reproducible() {
        let a = run_protocol(&toy(), &[Task::Detection], &Protocol::Holdout, &cfg()).unwrap();
        let b = run_protocol(&toy(), &[Task::Detection], &Protocol::Holdout, &cfg()).unwrap();
        assert_eq!(a.reports(Task::Detection)[0].1, b.reports(Task::Detection)[0].1);
        assert!(a.aggregate(Task::Detection).is_none());
        assert_eq!(a.folds[0].test_size, 4);
    }
}
