use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vroc_core::cotrain::{history_tsv, predict_distributions, predict_items, pretrain_history_tsv, pretrain_vae, Item, TrainConfig, TrainMode};
use vroc_core::eval::{check_protocol, compute_metrics_with, confusion_matrix, encode_items, render_text, render_tsv, run_protocol, MetricsReport, Protocol, ReportRow};
use vroc_core::gradsuite::{run_grad_suite, GRAD_TOLERANCE};
use vroc_core::heads::LabelSpace;
use vroc_core::labels::{order_events, Task};
use vroc_core::text::pheme::convert_pheme;
use vroc_core::text::{parse_dataset, split_holdout, tokenize, Dataset, Vocabulary};
use vroc_core::vae::{argmax, Vae};

use crate::manifest::{emit, sha256_hex, DatasetInfo, Manifest};
use crate::model::{self, ModelMeta};
use crate::{
    BuildVocabArgs, ConfigArgs, ConvertArgs, EvaluateArgs, Failure, GradcheckArgs, PredictArgs, PretrainArgs, ProtocolArg, TrainArgs,
};

fn load_config(args: &ConfigArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_toml_str(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_data(path: &Path) -> Result<(Dataset, DatasetInfo), Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let (dataset, report) = parse_dataset(&text);
    for s in report.skipped.iter().take(5) {
        log::warn!("{}:{}: skipped: {}", path.display(), s.line, s.reason);
    }
    if report.skipped.len() > 5 {
        log::warn!("{} more lines skipped", report.skipped.len() - 5);
    }
    if dataset.is_empty() {
        return Err(anyhow::anyhow!("{}: no usable examples", path.display()).into());
    }
    let info = DatasetInfo {
        path: path.to_path_buf(),
        sha256: sha256_hex(text.as_bytes()),
        examples: dataset.len(),
        skipped_lines: report.skipped.len(),
    };
    Ok((dataset, info))
}

/// Runs `body`, then records the outcome in the manifest.
fn with_manifest(
    out: &Path,
    mut manifest: Manifest,
    body: impl FnOnce(&mut Manifest) -> Result<(), Failure>,
) -> Result<(), Failure> {
    manifest.write(out)?;
    let result = body(&mut manifest);
    let status = match &result {
        Ok(()) => "ok",
        Err(Failure::Check(_)) => "check-failed",
        Err(_) => "failed",
    };
    manifest.finish(out, status)?;
    result
}

pub fn build_vocab(args: &BuildVocabArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(m) = args.min_freq {
        cfg.min_freq = m;
    }
    cfg.validate()?;
    let (dataset, info) = load_data(&args.data)?;
    let manifest = Manifest::new("build-vocab", &format!("{args:?}"), &cfg, Some(info));
    with_manifest(&args.out, manifest, |m| {
        let vocab = Vocabulary::build(dataset.examples().iter().map(|e| e.tokens.as_slice()), cfg.min_freq)?;
        emit(m, &args.out, model::VOCAB, vocab.to_file_string())?;
        println!("{} tokens (min_freq {})", vocab.len(), cfg.min_freq);
        Ok(())
    })
}

pub fn pretrain(args: &PretrainArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(e) = args.pretrain_epochs {
        cfg.pretrain_epochs = e;
    }
    cfg.validate()?;
    let (dataset, info) = load_data(&args.data)?;
    let manifest = Manifest::new("pretrain", &format!("{args:?}"), &cfg, Some(info));
    let run_id = manifest.run_id.clone();
    with_manifest(&args.out, manifest, |m| {
        let (fit, val) = split_holdout(&dataset, cfg.validation_fraction, cfg.seed.wrapping_add(1), |_| None)?;
        let vocab = Vocabulary::build(fit.examples().iter().map(|e| e.tokens.as_slice()), cfg.min_freq)?;
        let fit_items = encode_items(fit.examples(), &vocab, &[], cfg.max_len);
        let val_items = encode_items(val.examples(), &vocab, &[], cfg.max_len);
        let init = Vae::new(cfg.vae_config(vocab.len()), &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let pretrained = pretrain_vae(init, &fit_items, &val_items, &cfg)?;
        emit(m, &args.out, "pretrain_history.tsv", pretrain_history_tsv(&pretrained.history))?;
        let meta = ModelMeta {
            run_id,
            task: None,
            classes: Vec::new(),
            events: order_events(dataset.events()),
            config: cfg.clone(),
        };
        model::save(m, &args.out, "", &meta, &vocab, &pretrained.vae, None)?;
        match (pretrained.best_epoch, pretrained.history.last()) {
            (Some(b), _) => println!("best epoch {b}: validation -ELBO {:.4}", pretrained.history[b].val_neg_elbo),
            (None, Some(last)) => println!("final epoch {}: validation -ELBO {:.4}", last.epoch, last.val_neg_elbo),
            (None, None) => println!("no epochs run"),
        }
        Ok(())
    })
}

fn has_labels(dataset: &Dataset, space: &LabelSpace) -> bool {
    dataset.examples().iter().any(|e| space.label(e).is_some())
}

fn report_text(title: &str, rows: &[ReportRow<'_>], columns: &[String], run_id: &str) -> String {
    format!("{title}\n{}run {run_id}\n", render_text(rows, columns))
}

fn check_min(task: Task, report: &MetricsReport, min: Option<f64>, failures: &mut Vec<String>) {
    if let Some(min) = min {
        if report.macro_f1 < min {
            failures.push(format!("{task} macro-F1 {:.4} < {min}", report.macro_f1));
        }
    }
}

pub fn train(args: &TrainArgs, frozen: bool, command: &str) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(e) = args.pretrain_epochs {
        cfg.pretrain_epochs = e;
    }
    if frozen {
        cfg.mode = TrainMode::FrozenBaseline;
    }
    let requested: Vec<Task> = match args.task {
        Some(t) => vec![t],
        None => Task::ALL.to_vec(),
    };
    if let Some(l) = args.lambda {
        for t in &requested {
            cfg.lambda[t.index()] = l;
        }
    }
    cfg.validate()?;
    let protocol = match (args.protocol, &args.held_out_event) {
        (ProtocolArg::Loo, None) => return Err(Failure::Usage("--protocol loo needs --held-out-event".into())),
        (ProtocolArg::Loo, Some(e)) => Protocol::LeaveOneOut { event: e.clone() },
        (_, Some(_)) => return Err(Failure::Usage("--held-out-event only applies to --protocol loo".into())),
        (ProtocolArg::Holdout, None) => Protocol::Holdout,
        (ProtocolArg::LooAll, None) => Protocol::LeaveOneOutAll,
    };
    if let Some(t) = args.task {
        check_protocol(t, &protocol, &cfg.tracking).map_err(|e| Failure::Usage(e.to_string()))?;
    }

    let (dataset, info) = load_data(&args.data)?;
    let events = order_events(dataset.events());
    let mut tasks = Vec::new();
    for &t in &requested {
        if args.all_tasks && check_protocol(t, &protocol, &cfg.tracking).is_err() {
            log::warn!("skipping {t}: not applicable under {protocol}");
            continue;
        }
        let space = LabelSpace::new(t, &cfg.tracking, &events)?;
        if args.all_tasks && !has_labels(&dataset, &space) {
            log::warn!("skipping {t}: no labels in {}", args.data.display());
            continue;
        }
        tasks.push(t);
    }
    if tasks.is_empty() {
        return Err(anyhow::anyhow!("no trainable task in {}", args.data.display()).into());
    }

    let manifest = Manifest::new(command, &format!("{args:?} frozen={frozen}"), &cfg, Some(info));
    let run_id = manifest.run_id.clone();
    with_manifest(&args.out, manifest, |m| {
        let outcome = run_protocol(&dataset, &tasks, &protocol, &cfg)?;
        let out = &args.out;
        for fold in &outcome.folds {
            let pre_meta = ModelMeta {
                run_id: run_id.clone(),
                task: None,
                classes: Vec::new(),
                events: events.clone(),
                config: cfg.clone(),
            };
            emit(m, out, &format!("{}/pretrain_history.tsv", fold.label), pretrain_history_tsv(&fold.pretrained.history))?;
            model::save(m, out, &format!("{}/pretrained", fold.label), &pre_meta, &fold.vocab, &fold.pretrained.vae, None)?;
            for tf in &fold.tasks {
                let rel = format!("{}/{}", fold.label, tf.task);
                emit(m, out, &format!("{rel}/history.tsv"), history_tsv(&tf.trained))?;
                let space = outcome.space(tf.task).expect("space for trained task");
                let meta = ModelMeta {
                    run_id: run_id.clone(),
                    task: Some(tf.task),
                    classes: space.classes.clone(),
                    events: events.clone(),
                    config: cfg.clone(),
                };
                model::save(m, out, &rel, &meta, &fold.vocab, &tf.trained.vae, Some(&tf.trained.heads[tf.head]))?;
            }
        }

        let mut failures = Vec::new();
        let mut stdout = String::new();
        for space in &outcome.spaces {
            let task = space.task;
            let reports = outcome.reports(task);
            let aggregate = outcome.aggregate(task);
            let mut rows: Vec<ReportRow> = reports
                .iter()
                .map(|(label, report)| ReportRow { label: label.clone(), report })
                .collect();
            if let Some(a) = &aggregate {
                rows.push(ReportRow { label: "average".into(), report: a });
            }
            let columns = space.columns();
            let title = format!("{task} ({protocol}, {})", if frozen { "frozen baseline" } else { "co-trained" });
            let text = report_text(&title, &rows, &columns, &run_id);
            emit(m, out, &format!("{task}_report.tsv"), render_tsv(&rows, &columns))?;
            emit(m, out, &format!("{task}_report.txt"), &text)?;
            stdout.push_str(&text);
            stdout.push('\n');
            let summary = aggregate.as_ref().or_else(|| reports.first().map(|(_, r)| *r));
            if let Some(r) = summary {
                check_min(task, r, args.assert_min_macro_f1, &mut failures);
            }
        }
        print!("{stdout}");
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Failure::Check(failures.join("; ")))
        }
    })
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let dir = model::resolve(&args.model, args.task)?;
    let loaded = model::load(&dir)?;
    if let (Some(want), Some(have)) = (args.task, loaded.meta.task) {
        if want != have {
            return Err(Failure::Usage(format!("model in {} is for {have}, not {want}", dir.display())));
        }
    }
    let space = loaded.space()?;
    let head = loaded.head.as_ref().expect("task model has a head");
    let cfg = &loaded.meta.config;
    let (dataset, info) = load_data(&args.data)?;
    let items = encode_items(dataset.examples(), &loaded.vocab, std::slice::from_ref(&space), cfg.max_len);
    let labelled: Vec<&Item> = items.iter().filter(|i| i.labels[0].is_some()).collect();
    if labelled.is_empty() {
        return Err(anyhow::anyhow!("no {} labels in {}", space.task, args.data.display()).into());
    }
    let golds: Vec<usize> = labelled.iter().map(|i| i.labels[0].unwrap()).collect();
    let preds = predict_items(&loaded.vae, head, &labelled)?;
    let cm = confusion_matrix(&golds, &preds, space.classes.clone())?;
    let report = compute_metrics_with(&cm, cfg.zero_support);
    let rows = [ReportRow { label: "evaluation".into(), report: &report }];
    let columns = space.columns();
    let mut failures = Vec::new();
    check_min(space.task, &report, args.assert_min_macro_f1, &mut failures);
    let title = format!("{} on {}", space.task, args.data.display());
    let run_id = match &args.out {
        Some(out) => {
            let manifest = Manifest::new("evaluate", &format!("{args:?}"), cfg, Some(info));
            let run_id = manifest.run_id.clone();
            let text = report_text(&title, &rows, &columns, &run_id);
            with_manifest(out, manifest, |m| {
                emit(m, out, "report.tsv", render_tsv(&rows, &columns))?;
                emit(m, out, "report.txt", &text)?;
                Ok(())
            })?;
            run_id
        }
        None => loaded.meta.run_id.clone(),
    };
    print!("{}", report_text(&title, &rows, &columns, &run_id));
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failures.join("; ")))
    }
}

pub fn predict(args: &PredictArgs) -> Result<(), Failure> {
    let dir = model::resolve(&args.model, args.task)?;
    let loaded = model::load(&dir)?;
    let Some(head) = loaded.head.as_ref() else {
        return Err(Failure::Usage(format!("{} holds no task head", dir.display())));
    };
    if let Some(want) = args.task {
        if want != head.task {
            return Err(Failure::Usage(format!("model in {} is for {}, not {want}", dir.display(), head.task)));
        }
    }
    let tokens = tokenize(&args.text);
    let item = Item::unlabeled(loaded.vocab.encode(&tokens, loaded.meta.config.max_len));
    let dist = predict_distributions(&loaded.vae, head, &[&item])?.remove(0);
    println!("label\t{}", head.classes[argmax(&dist)]);
    for (class, p) in head.classes.iter().zip(&dist) {
        println!("{class}\t{p:.6}");
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    if args.instances == 0 {
        return Err(Failure::Usage("--instances must be at least 1".into()));
    }
    let run = |m: Option<&mut Manifest>| -> Result<(), Failure> {
        let cases = run_grad_suite(args.seed, args.instances)?;
        let mut names: Vec<&str> = Vec::new();
        for c in &cases {
            if !names.contains(&c.name.as_str()) {
                names.push(&c.name);
            }
        }
        let mut table = String::from("case\tinstances\tmax_rel_error\tfailed\n");
        let mut failed_cases = 0;
        for name in &names {
            let group: Vec<_> = cases.iter().filter(|c| c.name == *name).collect();
            let worst = group.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
            let failed = group.iter().filter(|c| !c.passed()).count();
            failed_cases += failed;
            table.push_str(&format!("{name}\t{}\t{worst:.3e}\t{failed}\n", group.len()));
        }
        print!("{table}");
        println!("{} checks, {failed_cases} above {GRAD_TOLERANCE:e}", cases.len());
        if let (Some(m), Some(out)) = (m, &args.out) {
            emit(m, out, "gradcheck.tsv", &table)?;
        }
        if failed_cases == 0 {
            Ok(())
        } else {
            Err(Failure::Check(format!("{failed_cases} gradient checks above {GRAD_TOLERANCE:e}")))
        }
    };
    match &args.out {
        Some(out) => {
            let cfg = TrainConfig { seed: args.seed, ..TrainConfig::default() };
            let manifest = Manifest::new("gradcheck", &format!("{args:?}"), &cfg, None);
            with_manifest(out, manifest, |m| run(Some(m)))
        }
        None => run(None),
    }
}

pub fn convert(args: &ConvertArgs) -> Result<(), Failure> {
    if !args.pheme.is_dir() {
        return Err(anyhow::anyhow!("{} is not a directory", args.pheme.display()).into());
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = BufWriter::new(file);
    let report = convert_pheme(&args.pheme, &mut writer)?;
    writer.flush().with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "{} threads written ({} rumours, {} non-rumours), {} skipped",
        report.written,
        report.rumours,
        report.non_rumours,
        report.skipped.len()
    );
    Ok(())
}
