//! Source normalization, symbol renaming, statement splitting, tokenization
//! and the statement vocabulary.

mod normalize;
mod rename;
mod tokenize;
mod vocab;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::RawFunction;
use crate::error::{Error, Result};

pub use normalize::{normalize_source, Normalized, Warning, NUMBER_TOKEN, STR_TOKEN};
pub use rename::{is_reserved, rename_symbols, reserved, Renamed, SymbolMap};
pub use tokenize::{split_statements, tokenize_statement};
pub use vocab::{build_vocab, frequency_vector, FreqVec, Vocab};

/// A function reduced to its statements' tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedFunction {
    pub statements: Vec<Vec<String>>,
    pub var_map: SymbolMap,
    pub func_map: SymbolMap,
}

impl TokenizedFunction {
    pub fn token_count(&self) -> usize {
        self.statements.iter().map(Vec::len).sum()
    }
}

/// normalize → rename → split → tokenize.
pub fn preprocess(code: &str) -> (TokenizedFunction, Vec<Warning>) {
    let normalized = normalize_source(code);
    let renamed = rename_symbols(&normalized.text);
    let statements = split_statements(&renamed.text)
        .iter()
        .map(|s| tokenize_statement(s))
        .filter(|t| !t.is_empty())
        .collect();
    let tf = TokenizedFunction { statements, var_map: renamed.var_map, func_map: renamed.func_map };
    (tf, normalized.warnings)
}

/// One line of the preprocessed-corpus JSONL file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessedRecord {
    pub id: String,
    pub statements: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub domain: String,
}

impl PreprocessedRecord {
    pub fn from_raw(raw: &RawFunction) -> (Self, Vec<Warning>) {
        let (tf, warnings) = preprocess(&raw.code);
        let rec = PreprocessedRecord {
            id: raw.id.clone(),
            statements: tf.statements,
            label: raw.label,
            domain: raw.domain.clone(),
        };
        (rec, warnings)
    }

    pub fn tokenized(&self) -> TokenizedFunction {
        TokenizedFunction { statements: self.statements.clone(), ..Default::default() }
    }
}

pub fn write_preprocessed(path: &Path, records: &[PreprocessedRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads either a raw dataset (`code` per line, preprocessed here) or an
/// already preprocessed file (`statements` per line).
pub fn load_functions(path: &Path) -> Result<Vec<PreprocessedRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let is_preprocessed = first
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v.get("statements").is_some());
    if is_preprocessed {
        parse_preprocessed(&text, path)
    } else {
        let raw = crate::corpus::parse_dataset(&text, path)?;
        Ok(raw.iter().map(|r| PreprocessedRecord::from_raw(r).0).collect())
    }
}

pub fn read_preprocessed(path: &Path) -> Result<Vec<PreprocessedRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_preprocessed(&text, path)
}

fn parse_preprocessed(text: &str, path: &Path) -> Result<Vec<PreprocessedRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PreprocessedRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
