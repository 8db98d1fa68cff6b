//! Tweet tokenization, vocabulary, JSONL datasets and split protocols.

mod dataset;
pub mod pheme;
mod split;
mod tokenize;
mod vocab;

pub use dataset::{load_dataset, parse_dataset, ClassCounts, Dataset, Example, Labels, LoadReport, SkippedLine};
pub use split::{split_holdout, split_leave_one_out};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown {field} label {value:?}")]
    UnknownLabel { field: &'static str, value: String },
    #[error("unknown event {event:?}; available: {available:?}")]
    UnknownEvent { event: String, available: Vec<String> },
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no {0} labels in dataset")]
    MissingLabels(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
