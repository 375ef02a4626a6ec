use std::collections::HashMap;
use std::path::Path;

use super::TokenizedFunction;
use crate::error::{Error, Result};

/// Token ↔ dense index, ordered by descending corpus count with
/// lexicographic tie-break.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!("vocab entry {i} is not a token: {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("vocab token {t:?} repeated")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sparse counts of in-vocabulary tokens, sorted by index.
    pub fn sparse_counts(&self, tokens: &[String]) -> Vec<(usize, f64)> {
        let mut ids: Vec<usize> = tokens.iter().filter_map(|t| self.index_of(t)).collect();
        ids.sort_unstable();
        let mut out: Vec<(usize, f64)> = Vec::new();
        for id in ids {
            match out.last_mut() {
                Some((last, n)) if *last == id => *n += 1.0,
                _ => out.push((id, 1.0)),
            }
        }
        out
    }

    /// One token per line; the line number is the index.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Builds the vocabulary from training functions, keeping tokens seen at least
/// `min_count` times.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a TokenizedFunction>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen_any = false;
    for f in corpus {
        seen_any = true;
        for t in f.statements.iter().flatten() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if !seen_any {
        return Err(Error::Validation("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut entries: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_tokens(entries.into_iter().map(|(t, _)| t.to_owned()).collect())
}

/// Dense per-statement token counts over the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqVec {
    pub counts: Vec<u32>,
}

impl FreqVec {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Counts of each vocabulary token in `tokens`; unknown tokens are ignored.
pub fn frequency_vector(tokens: &[String], vocab: &Vocab) -> FreqVec {
    let mut counts = vec![0u32; vocab.len()];
    for t in tokens {
        if let Some(i) = vocab.index_of(t) {
            counts[i] += 1;
        }
    }
    FreqVec { counts }
}
