use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::DataError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Token ↔ id map. Ids 0..4 are the specials; the rest are ordered by
/// descending corpus count, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocabulary {
    pub fn build<'a, I, S>(corpus: I, min_freq: usize) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        if min_freq == 0 {
            return Err(DataError::InvalidArgument("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_any = false;
        for sentence in corpus {
            seen_any = true;
            for tok in sentence {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        if !seen_any {
            log::warn!("building vocabulary from an empty corpus");
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && !SPECIALS.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_tokens(
            kept.into_iter().map(|(t, _)| t.to_string()),
            min_freq,
        ))
    }

    fn from_tokens(regular: impl Iterator<Item = String>, min_freq: usize) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(regular);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Id of a token, `UNK` when out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `BOS + ids + EOS`, truncated to `max_len` while keeping both markers.
    /// A `max_len` below 3 is treated as 3.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Vec<usize> {
        let body = max_len.max(3) - 2;
        let mut ids = Vec::with_capacity(tokens.len().min(body) + 2);
        ids.push(BOS);
        ids.extend(tokens.iter().take(body).map(|t| self.id(t.as_ref())));
        ids.push(EOS);
        ids
    }

    /// Tokens for ids, dropping specials other than UNK.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i == UNK || i >= SPECIALS.len())
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// One non-special token per line; line `n` (0-based) holds id `n + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[SPECIALS.len()..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str, min_freq: usize) -> Result<Self, DataError> {
        let mut seen = std::collections::HashSet::new();
        let mut regular = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() || SPECIALS.contains(&line) || !seen.insert(line) {
                return Err(DataError::InvalidArgument(format!(
                    "vocabulary line {}: empty, special or duplicate token {line:?}",
                    n + 1
                )));
            }
            regular.push(line.to_string());
        }
        Ok(Self::from_tokens(regular.into_iter(), min_freq))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_file_string(&text, 1)
    }
}
