use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use super::normalize::{NUMBER_TOKEN, STR_TOKEN};

static RESERVED_LIST: &str = include_str!("../../data/reserved.txt");

/// Keywords, type names and library calls that are never renamed.
pub fn reserved() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        RESERVED_LIST
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_reserved(ident: &str) -> bool {
    reserved().contains(ident)
}

/// Original identifier → symbolic name.
pub type SymbolMap = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Renamed {
    pub text: String,
    pub var_map: SymbolMap,
    pub func_map: SymbolMap,
}

/// Replaces user identifiers with `funcN` (when the first occurrence is
/// followed by `(`) or `varN`, numbering each kind from 1 in order of first
/// occurrence.
pub fn rename_symbols(code: &str) -> Renamed {
    let bytes = code.as_bytes();
    let mut text = String::with_capacity(code.len());
    let mut var_map = SymbolMap::new();
    let mut func_map = SymbolMap::new();
    let mut i = 0;

    while i < bytes.len() {
        let rest = &code[i..];
        if let Some(s) = [NUMBER_TOKEN, STR_TOKEN].into_iter().find(|s| rest.starts_with(s)) {
            text.push_str(s);
            i += s.len();
            continue;
        }
        let c = bytes[i];
        if c.is_ascii_alphabetic() || c == b'_' {
            let end = rest
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .map_or(code.len(), |off| i + off);
            let ident = &code[i..end];
            if is_reserved(ident) {
                text.push_str(ident);
            } else if let Some(sym) = func_map.get(ident).or_else(|| var_map.get(ident)) {
                text.push_str(sym);
            } else {
                let called = code[end..].trim_start().starts_with('(');
                let (map, prefix) = if called { (&mut func_map, "func") } else { (&mut var_map, "var") };
                let sym = format!("{prefix}{}", map.len() + 1);
                text.push_str(&sym);
                map.insert(ident.to_owned(), sym);
            }
            i = end;
        } else if c.is_ascii_digit() {
            // digits glued to an identifier-like run (raw literals) pass through
            let end = rest
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_' || ch == '.'))
                .map_or(code.len(), |off| i + off);
            text.push_str(&code[i..end]);
            i = end;
        } else {
            let ch = rest.chars().next().expect("non-empty");
            text.push(ch);
            i += ch.len_utf8();
        }
    }
    Renamed { text, var_map, func_map }
}
