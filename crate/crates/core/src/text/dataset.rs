use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, DataError};
use crate::labels::{Detection, Stance, Veracity};

/// Per-task gold labels; absent labels are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Labels {
    pub detection: Option<Detection>,
    pub stance: Option<Stance>,
    pub veracity: Option<Veracity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub event: String,
    pub tokens: Vec<String>,
    pub labels: Labels,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, event: impl Into<String>, labels: Labels) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            tokens: tokenize(&text),
            text,
            event: event.into(),
            labels,
        }
    }
}

/// Class counts per task, keyed by label name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub detection: BTreeMap<String, usize>,
    pub stance: BTreeMap<String, usize>,
    pub veracity: BTreeMap<String, usize>,
    pub events: BTreeMap<String, usize>,
}

impl ClassCounts {
    fn recount(examples: &[Example]) -> Self {
        let mut c = Self::default();
        for ex in examples {
            *c.events.entry(ex.event.clone()).or_default() += 1;
            if let Some(l) = ex.labels.detection {
                *c.detection.entry(l.name().into()).or_default() += 1;
            }
            if let Some(l) = ex.labels.stance {
                *c.stance.entry(l.name().into()).or_default() += 1;
            }
            if let Some(l) = ex.labels.veracity {
                *c.veracity.entry(l.name().into()).or_default() += 1;
            }
        }
        c
    }
}

/// Immutable example collection with cached class counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    counts: ClassCounts,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        let counts = ClassCounts::recount(&examples);
        Self { examples, counts }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn counts(&self) -> &ClassCounts {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Distinct events in first-appearance order.
    pub fn events(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for ex in &self.examples {
            if !out.contains(&ex.event) {
                out.push(ex.event.clone());
            }
        }
        out
    }

    pub fn filter(&self, keep: impl Fn(&Example) -> bool) -> Dataset {
        Dataset::new(self.examples.iter().filter(|e| keep(e)).cloned().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub skipped: Vec<SkippedLine>,
}

#[derive(Deserialize, Serialize)]
pub(crate) struct RawExample {
    pub id: String,
    pub text: String,
    pub event: String,
    #[serde(default)]
    pub labels: RawLabels,
}

#[derive(Deserialize, Serialize, Default)]
pub(crate) struct RawLabels {
    #[serde(default)]
    pub detection: Option<String>,
    #[serde(default)]
    pub stance: Option<String>,
    #[serde(default)]
    pub veracity: Option<String>,
}

fn parse_label<T>(field: &'static str, raw: Option<String>, parse: fn(&str) -> Option<T>) -> Result<Option<T>, DataError> {
    match raw {
        None => Ok(None),
        Some(value) => parse(&value)
            .map(Some)
            .ok_or(DataError::UnknownLabel { field, value }),
    }
}

fn parse_line(line: &str) -> Result<Example, String> {
    let raw: RawExample = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let labels = Labels {
        detection: parse_label("detection", raw.labels.detection, Detection::parse).map_err(|e| e.to_string())?,
        stance: parse_label("stance", raw.labels.stance, Stance::parse).map_err(|e| e.to_string())?,
        veracity: parse_label("veracity", raw.labels.veracity, Veracity::parse).map_err(|e| e.to_string())?,
    };
    Ok(Example::new(raw.id, raw.text, raw.event, labels))
}

/// Parses JSONL text. Bad lines are skipped and reported; blank lines are
/// ignored.
pub fn parse_dataset(text: &str) -> (Dataset, LoadReport) {
    let mut examples = Vec::new();
    let mut report = LoadReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(ex) => examples.push(ex),
            Err(reason) => {
                log::warn!("line {}: {reason}", i + 1);
                report.skipped.push(SkippedLine { line: i + 1, reason });
            }
        }
    }
    if examples.is_empty() {
        log::warn!("dataset is empty");
    }
    (Dataset::new(examples), report)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Dataset, LoadReport), DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let (ds, report) = parse_dataset(&text);
    log::info!(
        "{}: {} examples, {} skipped; detection {:?}; stance {:?}; veracity {:?}; events {:?}",
        path.display(),
        ds.len(),
        report.skipped.len(),
        ds.counts().detection,
        ds.counts().stance,
        ds.counts().veracity,
        ds.counts().events,
    );
    Ok((ds, report))
}
