use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const EVENTS: [&str; 5] = ["sydneysiege", "germanwings-crash", "ferguson", "charliehebdo", "ottawashooting"];
const STANCES: [&str; 4] = ["Support", "Deny", "Comment", "Query"];

const CONFIG: &str = "\
epochs = 2
pretrain_epochs = 2
batch_size = 16
min_freq = 1

[vae]
embed_dim = 6
hidden = 6
dense_dim = 6
latent_dim = 4

[head]
latent_dim = 4
steps = 2
hidden = 3
";

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let mut jsonl = String::new();
        for i in 0..100 {
            let rumor = i % 2 == 0;
            let veracity = if rumor { format!(",\"veracity\":\"{}\"", ["True", "False", "Unverified"][i / 2 % 3]) } else { String::new() };
            jsonl.push_str(&format!(
                "{{\"id\":\"{i}\",\"text\":\"{} {} w{} m{}\",\"event\":\"{}\",\"labels\":{{\"detection\":\"{}\",\"stance\":\"{}\"{veracity}}}}}\n",
                EVENTS[i % 5].split('-').next().unwrap(),
                if rumor { "claim" } else { "news" },
                i % 7,
                i % 4,
                EVENTS[i % 5],
                if rumor { "Rumor" } else { "Nonrumor" },
                STANCES[i % 4],
            ));
        }
        fs::write(dir.path().join("data.jsonl"), jsonl).unwrap();
        fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_vroc"))
            .args(args)
            .current_dir(self.dir.path())
            .env("RUST_LOG", "error")
            .output()
            .unwrap()
    }

    fn cotrain(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec!["cotrain", "--data", "data.jsonl", "--config", "config.toml", "--out", out];
        args.extend_from_slice(extra);
        self.run(&args)
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let f = Fixture::new();
    for args in [
        vec!["frobnicate"],
        vec!["cotrain", "--data", "data.jsonl", "--out", "x"],
        vec!["cotrain", "--data", "data.jsonl", "--out", "x", "--task", "stance", "--protocol", "loo"],
        vec!["cotrain", "--data", "data.jsonl", "--out", "x", "--task", "tracking", "--protocol", "loo-all"],
        vec!["cotrain", "--data", "data.jsonl", "--out", "x", "--task", "stance", "--lambda", "-1"],
        vec!["cotrain", "--data", "data.jsonl", "--out", "x", "--task", "rumour"],
        vec!["evaluate", "--bogus"],
    ] {
        let o = f.run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!f.path("x").exists());
}

#[test]
fn data_errors_exit_1() {
    let f = Fixture::new();
    assert_eq!(code(&f.run(&["cotrain", "--data", "missing.jsonl", "--out", "x", "--task", "stance"])), 1);
    fs::write(f.path("bad.toml"), "epochs = \"many\"\n").unwrap();
    let o = f.run(&["cotrain", "--data", "data.jsonl", "--config", "bad.toml", "--out", "x", "--task", "stance"]);
    assert_eq!(code(&o), 1);
    let o = f.cotrain("x", &["--task", "stance", "--protocol", "loo", "--held-out-event", "atlantis"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("atlantis"));
    assert_eq!(manifest(&f.path("x"))["status"], "failed");
}

#[test]
fn cotrain_writes_manifest_and_artifacts() {
    let f = Fixture::new();
    let o = f.cotrain("run", &["--task", "detection", "--seed", "7", "--lambda", "3.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = f.path("run");
    let m = manifest(&run);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["epochs"], 2);
    assert_eq!(m["config"]["lambda"][0], 3.5);
    assert_eq!(m["config"]["lambda"][2], 1.0);
    let sha = m["dataset"]["sha256"].as_str().unwrap();
    assert!(sha.len() == 64 && sha.chars().all(|c| c.is_ascii_hexdigit()));
    assert_eq!(m["dataset"]["examples"], 100);
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    for a in &artifacts {
        assert!(run.join(a).is_file(), "{a}");
    }
    for want in ["holdout/detection/history.tsv", "holdout/detection/head.ckpt", "detection_report.tsv"] {
        assert!(artifacts.contains(&want), "{want}");
    }
    let history = fs::read_to_string(run.join("holdout/detection/history.tsv")).unwrap();
    assert!(history.starts_with("epoch\tneg_elbo\tl_task\tval_macro_f1\n"));
    assert_eq!(history.lines().count(), 3);
    let report = fs::read_to_string(run.join("detection_report.txt")).unwrap();
    assert!(report.contains(m["run_id"].as_str().unwrap()));
    assert!(stdout(&o).contains("Nonrumor"));
}

#[test]
fn reruns_reproduce_history() {
    let f = Fixture::new();
    for out in ["a", "b"] {
        assert_eq!(code(&f.cotrain(out, &["--task", "stance"])), 0);
    }
    let read = |d: &str| fs::read(f.path(d).join("holdout/stance/history.tsv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let ckpt = |d: &str| fs::read(f.path(d).join("holdout/stance/head.ckpt")).unwrap();
    assert_eq!(ckpt("a"), ckpt("b"));
}

#[test]
fn frozen_baseline_keeps_the_pretrained_vae() {
    let f = Fixture::new();
    assert_eq!(code(&f.cotrain("frozen", &["--task", "stance", "--frozen"])), 0);
    let o = f.run(&["train-baseline", "--data", "data.jsonl", "--config", "config.toml", "--out", "base", "--task", "stance"]);
    assert_eq!(code(&o), 0);
    for run in ["frozen", "base"] {
        let d = f.path(run).join("holdout");
        assert_eq!(fs::read(d.join("pretrained/vae.ckpt")).unwrap(), fs::read(d.join("stance/vae.ckpt")).unwrap());
        assert_eq!(manifest(&f.path(run))["config"]["mode"], "frozen-baseline");
    }
}

#[test]
fn evaluate_and_predict_use_saved_models() {
    let f = Fixture::new();
    assert_eq!(code(&f.cotrain("run", &["--task", "stance"])), 0);
    let o = f.run(&["predict", "--model", "run/holdout", "--task", "stance", "--text", "ferguson claim w1 m2"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 5);
    let label = lines[0].strip_prefix("label\t").unwrap();
    assert!(STANCES.contains(&label));
    let total: f64 = lines[1..].iter().map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-5);
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, STANCES);

    let o = f.run(&["evaluate", "--model", "run/holdout/stance", "--data", "data.jsonl", "--out", "ev"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("Support"));
    assert_eq!(manifest(&f.path("ev"))["status"], "ok");
    let tsv = fs::read_to_string(f.path("ev/report.tsv")).unwrap();
    assert!(tsv.starts_with("Run\tAccuracy\tMacro-F1\tSupport\tDeny\tComment\tQuery\n"));

    let o = f.run(&["evaluate", "--model", "run/holdout", "--task", "detection", "--data", "data.jsonl"]);
    assert_eq!(code(&o), 1);
    let o = f.run(&["evaluate", "--model", "run/holdout/stance", "--task", "detection", "--data", "data.jsonl"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn macro_f1_assertion_sets_exit_3() {
    let f = Fixture::new();
    assert_eq!(code(&f.cotrain("pass", &["--task", "detection", "--assert-min-macro-f1", "0"])), 0);
    let o = f.cotrain("fail", &["--task", "detection", "--assert-min-macro-f1", "1"]);
    if code(&o) == 3 {
        assert_eq!(manifest(&f.path("fail"))["status"], "check-failed");
    } else {
        assert_eq!(code(&o), 0);
        let tsv = fs::read_to_string(f.path("fail/detection_report.tsv")).unwrap();
        assert!(tsv.lines().nth(1).unwrap().split('\t').nth(2) == Some("1.000"));
    }
}

#[test]
fn leave_one_out_all_reports_every_event_and_the_average() {
    let f = Fixture::new();
    let o = f.cotrain("loo", &["--all-tasks", "--protocol", "loo-all", "--epochs", "1", "--pretrain-epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tsv = fs::read_to_string(f.path("loo/stance_report.tsv")).unwrap();
    let runs: Vec<&str> = tsv.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(runs, ["sydneysiege", "germanwings-crash", "ferguson", "charliehebdo", "ottawashooting", "average"]);
    // Five-way tracking cannot be left out, so only the other tasks ran.
    assert!(!f.path("loo/tracking_report.tsv").exists());
    assert!(f.path("loo/veracity_report.tsv").exists());
}

#[test]
fn vocabulary_and_pretraining_outputs() {
    let f = Fixture::new();
    let o = f.run(&["build-vocab", "--data", "data.jsonl", "--config", "config.toml", "--out", "v"]);
    assert_eq!(code(&o), 0);
    assert!(f.path("v/vocab.txt").is_file());
    let o = f.run(&["pretrain", "--data", "data.jsonl", "--config", "config.toml", "--out", "p", "--pretrain-epochs", "1"]);
    assert_eq!(code(&o), 0);
    let history = fs::read_to_string(f.path("p/pretrain_history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(f.path("p/vae.ckpt").is_file());
    let o = f.run(&["predict", "--model", "p", "--text", "hello"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes() {
    let f = Fixture::new();
    let o = f.run(&["gradcheck", "--instances", "2", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains(", 0 above"));
    assert!(f.path("g/gradcheck.tsv").is_file());
}

#[test]
fn convert_rejects_a_missing_tree() {
    let f = Fixture::new();
    assert_eq!(code(&f.run(&["convert-pheme", "--pheme", "nowhere", "--out", "o.jsonl"])), 1);
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let f = Fixture::new();
    let o = Command::new(env!("CARGO_BIN_EXE_vroc"))
        .args(["gradcheck", "--instances", "1"])
        .current_dir(f.dir.path())
        .env("VROC_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
