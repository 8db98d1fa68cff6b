//! Converter from the PHEME thread-directory layout to the flat JSONL schema.
//!
//! Expected layout (both the 5-event and 9-event releases):
//!
//! ```text
//! <root>/<event>[-all-rnr-threads]/{rumours,non-rumours}/<thread>/source-tweet[s]/<id>.json
//! <root>/<event>[-all-rnr-threads]/rumours/<thread>/annotation.json   (optional)
//! ```
//!
//! Only source tweets are converted. Veracity comes from `annotation.json`
//! when it carries `misinformation`/`true` flags. Stance labels are not part
//! of PHEME and must be merged from RumourEval separately.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;
use walkdir::WalkDir;

use super::dataset::{RawExample, RawLabels};
use super::DataError;

/// Summary of a conversion run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConvertReport {
    pub written: usize,
    pub rumours: usize,
    pub non_rumours: usize,
    pub skipped: Vec<PathBuf>,
}

fn veracity_from_annotation(path: &Path) -> Option<&'static str> {
    let text = fs::read_to_string(path).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    let flag = |k: &str| -> Option<bool> {
        match v.get(k)? {
            Value::Number(n) => Some(n.as_i64()? == 1),
            Value::String(s) => Some(s == "1"),
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    };
    let misinformation = flag("misinformation")?;
    let true_flag = flag("true").unwrap_or(false);
    Some(if misinformation {
        "False"
    } else if true_flag {
        "True"
    } else {
        "Unverified"
    })
}

/// Converts a PHEME tree rooted at `root`, writing one JSON object per line.
pub fn convert_pheme<W: Write>(root: &Path, mut out: W) -> Result<ConvertReport, DataError> {
    let mut records: Vec<(String, String, String, RawExample)> = Vec::new();
    let mut report = ConvertReport::default();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| DataError::InvalidArgument(format!("walking {}: {e}", root.display())))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let parent = path.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str());
        if !matches!(parent, Some("source-tweet") | Some("source-tweets")) {
            continue;
        }
        let thread_dir = path.parent().and_then(Path::parent);
        let class_dir = thread_dir.and_then(Path::parent);
        let event_dir = class_dir.and_then(Path::parent);
        let (Some(thread_dir), Some(class_dir), Some(event_dir)) = (thread_dir, class_dir, event_dir) else {
            report.skipped.push(path.to_path_buf());
            continue;
        };
        let class = class_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let detection = match class {
            "rumours" => "Rumor",
            "non-rumours" => "Nonrumor",
            _ => {
                report.skipped.push(path.to_path_buf());
                continue;
            }
        };
        let event = event_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .trim_end_matches("-all-rnr-threads")
            .to_string();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let tweet: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(_) => {
                report.skipped.push(path.to_path_buf());
                continue;
            }
        };
        let id = tweet
            .get("id_str")
            .and_then(Value::as_str)
            .map(str::to_string)
            .or_else(|| tweet.get("id").map(|v| v.to_string()))
            .unwrap_or_else(|| path.file_stem().unwrap().to_string_lossy().into_owned());
        let Some(body) = tweet.get("text").or_else(|| tweet.get("full_text")).and_then(Value::as_str) else {
            report.skipped.push(path.to_path_buf());
            continue;
        };
        let veracity = if detection == "Rumor" {
            veracity_from_annotation(&thread_dir.join("annotation.json")).map(str::to_string)
        } else {
            None
        };
        if detection == "Rumor" {
            report.rumours += 1;
        } else {
            report.non_rumours += 1;
        }
        let thread = thread_dir.file_name().unwrap().to_string_lossy().into_owned();
        records.push((
            event.clone(),
            class.to_string(),
            thread,
            RawExample {
                id,
                text: body.to_string(),
                event,
                labels: RawLabels {
                    detection: Some(detection.to_string()),
                    stance: None,
                    veracity,
                },
            },
        ));
    }
    records.sort_by(|a, b| (&a.0, &a.1, &a.2).cmp(&(&b.0, &b.1, &b.2)));
    for (_, _, _, rec) in &records {
        let line = serde_json::to_string(rec).expect("serializable record");
        writeln!(out, "{line}").map_err(|e| DataError::io("<output>", e))?;
        report.written += 1;
    }
    Ok(report)
}
