//! Raw function datasets: the JSONL format, random 80/20 splits, and a
//! synthetic two-style corpus of C-like functions with planted bugs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One function as stored in a dataset file. `label` is 1 for vulnerable,
/// 0 for clean, absent for unlabeled data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFunction {
    pub id: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub domain: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainStyle {
    A,
    B,
}

impl DomainStyle {
    pub fn tag(self) -> &'static str {
        match self {
            DomainStyle::A => "synth-a",
            DomainStyle::B => "synth-b",
        }
    }
}

impl std::str::FromStr for DomainStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(DomainStyle::A),
            "B" | "b" => Ok(DomainStyle::B),
            other => Err(Error::Validation(format!("unknown domain style {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_functions: usize,
    pub vulnerable_ratio: f64,
    pub domain_style: DomainStyle,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(n_functions: usize, domain_style: DomainStyle, seed: u64) -> Self {
        CorpusSpec { n_functions, vulnerable_ratio: 0.10, domain_style, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_functions == 0 {
            return Err(Error::Validation("n_functions must be positive".into()));
        }
        if !(self.vulnerable_ratio > 0.0 && self.vulnerable_ratio < 1.0) {
            return Err(Error::Validation(format!(
                "vulnerable_ratio must lie strictly between 0 and 1, got {}",
                self.vulnerable_ratio
            )));
        }
        Ok(())
    }

    pub fn vulnerable_count(&self) -> usize {
        (self.n_functions as f64 * self.vulnerable_ratio).round() as usize
    }
}

/// The planted vulnerability kinds. Every vulnerable function carries exactly
/// one of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Idiom {
    /// A caller-controlled length copied into a fixed-size stack buffer with no
    /// bound check.
    UncheckedCopy,
    /// A loop whose index reaches the declared array length (`<=` bound).
    IndexPastBound,
}

/// Library calls used to realise the copy idiom.
pub const COPY_CALLS: &[&str] = &["memcpy", "memmove", "strcpy"];

/// Generates a synthetic corpus. A pure function of `spec`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<RawFunction>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_functions;
    let mut vulnerable = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &i in &order[..spec.vulnerable_count()] {
        vulnerable[i] = true;
    }

    let style = Style::of(spec.domain_style);
    let tag = spec.domain_style.tag();
    Ok((0..n)
        .map(|i| {
            let mut g = FnGen::new(&style, &mut rng);
            let code = g.function(vulnerable[i]);
            RawFunction {
                id: format!("{tag}-{i:05}"),
                code,
                label: Some(u8::from(vulnerable[i])),
                domain: tag.to_owned(),
            }
        })
        .collect())
}

/// Reads a dataset file: one JSON object per line with keys `id`, `code`,
/// optional `label` (0 or 1) and `domain`. Blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<RawFunction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<RawFunction>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_owned(), line: line_no, msg };
        let f: RawFunction = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(l) = f.label {
            if l > 1 {
                return Err(parse_err(format!("label must be 0 or 1, got {l}")));
            }
        }
        if !ids.insert(f.id.clone()) {
            return Err(Error::DuplicateId { path: path.to_owned(), line: line_no, id: f.id });
        }
        out.push(f);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, functions: &[RawFunction]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for f in functions {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub heldout: Vec<T>,
}

/// Uniformly random 80/20 partition (not stratified).
pub fn split_dataset<T: Clone>(ds: &[T], seed: u64) -> Result<DatasetSplit<T>> {
    if ds.len() < 5 {
        return Err(Error::Validation(format!("need at least 5 items to split, got {}", ds.len())));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ds.len() as f64 * TRAIN_FRACTION).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds[i].clone()).collect();
    Ok(DatasetSplit { train: pick(&order[..n_train]), heldout: pick(&order[n_train..]) })
}

// ---------------------------------------------------------------------------
// synthetic generator

struct Style {
    snake: bool,
    words: &'static [&'static str],
    scalar_types: &'static [&'static str],
    /// (copy call, weight)
    copy_calls: &'static [(&'static str, u32)],
    /// probability that the index idiom is written as a `while` loop
    while_loops: f64,
    filler: (usize, usize),
    /// weights for: decl, arith, call, if, loop, libcall, member, switch
    mixture: [u32; 8],
    arith_ops: &'static [&'static str],
    libcalls: &'static [LibCall],
}

#[derive(Clone, Copy)]
enum LibCall {
    Memset,
    Malloc,
    Free,
    Printf,
    Calloc,
    Strlen,
    Fprintf,
    Fread,
    Strcmp,
}

impl Style {
    fn of(style: DomainStyle) -> Style {
        match style {
            DomainStyle::A => Style {
                snake: true,
                words: &[
                    "frame", "pkt", "buf", "size", "len", "codec", "ctx", "stream", "sample", "rate",
                    "chan", "pts", "offset", "bits", "plane", "stride", "pos", "data",
                ],
                scalar_types: &["int", "int", "unsigned", "uint8_t", "int64_t", "uint32_t"],
                copy_calls: &[("memcpy", 6), ("strcpy", 2)],
                while_loops: 0.15,
                filler: (6, 14),
                mixture: [3, 5, 3, 3, 3, 2, 0, 0],
                arith_ops: &["+", "-", "*", ">>", "<<", "&", "|"],
                libcalls: &[LibCall::Memset, LibCall::Malloc, LibCall::Free, LibCall::Printf],
            },
            DomainStyle::B => Style {
                snake: false,
                words: &[
                    "tile", "strip", "row", "width", "height", "dir", "tag", "count", "scanline",
                    "image", "info", "palette", "depth", "chunk", "field", "entry", "value", "photo",
                ],
                scalar_types: &["uint32_t", "uint16_t", "size_t", "long", "int", "char"],
                copy_calls: &[("strcpy", 3), ("memmove", 3), ("memcpy", 2)],
                while_loops: 0.75,
                filler: (8, 18),
                mixture: [3, 2, 2, 3, 2, 3, 4, 2],
                arith_ops: &["+", "-", "*", "/", "%"],
                libcalls: &[
                    LibCall::Calloc,
                    LibCall::Strlen,
                    LibCall::Fprintf,
                    LibCall::Fread,
                    LibCall::Strcmp,
                    LibCall::Free,
                ],
            },
        }
    }
}

struct FnGen<'a, R: Rng> {
    style: &'a Style,
    rng: &'a mut R,
    lines: Vec<String>,
    depth: usize,
    scalars: Vec<String>,
    used: HashSet<String>,
}

impl<'a, R: Rng> FnGen<'a, R> {
    fn new(style: &'a Style, rng: &'a mut R) -> Self {
        FnGen { style, rng, lines: Vec::new(), depth: 1, scalars: Vec::new(), used: HashSet::new() }
    }

    fn ident(&mut self) -> String {
        loop {
            let a = *self.style.words.choose(self.rng).expect("words");
            let b = *self.style.words.choose(self.rng).expect("words");
            let name = if a == b {
                a.to_owned()
            } else if self.style.snake {
                format!("{a}_{b}")
            } else {
                let mut cs = b.chars();
                let first = cs.next().expect("non-empty").to_ascii_uppercase();
                format!("{a}{first}{}", cs.as_str())
            };
            if self.used.insert(name.clone()) {
                return name;
            }
            if self.used.len() > 200 {
                let n = format!("{name}{}", self.used.len());
                self.used.insert(n.clone());
                return n;
            }
        }
    }

    fn func_name(&mut self) -> String {
        let base = self.ident();
        if self.style.snake {
            format!("ff_{base}")
        } else {
            format!("TIFF{}{}", base[..1].to_ascii_uppercase(), &base[1..])
        }
    }

    fn scalar(&mut self) -> String {
        if self.scalars.is_empty() || self.rng.random_bool(0.1) {
            let name = self.ident();
            self.scalars.push(name.clone());
            let ty = *self.style.scalar_types.choose(self.rng).expect("types");
            let init = self.rng.random_range(0..64);
            self.emit(format!("{ty} {name} = {init};"));
            return name;
        }
        self.scalars.choose(self.rng).expect("non-empty").clone()
    }

    fn emit(&mut self, line: String) {
        let indent = "    ".repeat(self.depth);
        self.lines.push(format!("{indent}{line}"));
    }

    fn small_number(&mut self) -> String {
        match self.rng.random_range(0..4) {
            0 => format!("0x{:X}", self.rng.random_range(1..256)),
            _ => self.rng.random_range(1..100).to_string(),
        }
    }

    fn pick_weighted<T: Copy>(&mut self, items: &[(T, u32)]) -> T {
        let total: u32 = items.iter().map(|x| x.1).sum();
        let mut r = self.rng.random_range(0..total);
        for &(item, w) in items {
            if r < w {
                return item;
            }
            r -= w;
        }
        items[items.len() - 1].0
    }

    fn filler(&mut self, allow_blocks: bool) {
        let kinds: Vec<(usize, u32)> = self
            .style
            .mixture
            .iter()
            .enumerate()
            .filter(|&(k, _)| allow_blocks || !matches!(k, 3 | 4 | 7))
            .map(|(k, &w)| (k, w))
            .filter(|&(_, w)| w > 0)
            .collect();
        match self.pick_weighted(&kinds) {
            0 => {
                let name = self.ident();
                let ty = *self.style.scalar_types.choose(self.rng).expect("types");
                let rhs = self.small_number();
                self.emit(format!("{ty} {name} = {rhs};"));
                self.scalars.push(name);
            }
            1 => {
                let dst = self.scalar();
                let a = self.scalar();
                let op = *self.style.arith_ops.choose(self.rng).expect("ops");
                let rhs = if self.rng.random_bool(0.5) { self.small_number() } else { self.scalar() };
                self.emit(format!("{dst} = {a} {op} {rhs};"));
            }
            2 => {
                let f = self.func_name();
                let a = self.scalar();
                let dst = self.scalar();
                self.emit(format!("{dst} = {f}({a});"));
            }
            3 => {
                let v = self.scalar();
                let cmp = *["<", ">", "==", "!=", ">="].choose(self.rng).expect("cmp");
                let k = self.small_number();
                self.emit(format!("if ({v} {cmp} {k}) {{"));
                self.block(1, 2);
                if self.rng.random_bool(0.3) {
                    self.emit("} else {".into());
                    self.block(1, 1);
                }
                self.emit("}".into());
            }
            4 => {
                let i = self.ident();
                let bound = if self.rng.random_bool(0.5) { self.small_number() } else { self.scalar() };
                if self.rng.random_bool(self.style.while_loops) {
                    self.emit(format!("int {i} = 0;"));
                    self.emit(format!("while ({i} < {bound}) {{"));
                    self.block(1, 2);
                    self.depth += 1;
                    self.emit(format!("{i}++;"));
                    self.depth -= 1;
                } else {
                    self.emit(format!("for (int {i} = 0; {i} < {bound}; {i}++) {{"));
                    self.block(1, 2);
                }
                self.emit("}".into());
            }
            5 => self.libcall(),
            6 => {
                let obj = self.ident();
                let field = *self.style.words.choose(self.rng).expect("words");
                let v = self.scalar();
                if self.rng.random_bool(0.5) {
                    self.emit(format!("{obj}->{field} = {v};"));
                } else {
                    self.emit(format!("{v} = {obj}->{field};"));
                }
            }
            _ => {
                let v = self.scalar();
                self.emit(format!("switch ({v}) {{"));
                for c in 0..self.rng.random_range(2..4) {
                    let dst = self.scalar();
                    let k = self.small_number();
                    self.emit(format!("case {c}: {dst} = {k}; break;"));
                }
                self.emit("default: break;".into());
                self.emit("}".into());
            }
        }
    }

    fn libcall(&mut self) {
        let call = *self.style.libcalls.choose(self.rng).expect("libcalls");
        let line = match call {
            LibCall::Memset => {
                let p = self.ident();
                let n = self.scalar();
                format!("memset({p}, 0, {n});")
            }
            LibCall::Malloc => {
                let p = self.ident();
                let n = self.scalar();
                format!("void *{p} = malloc({n});")
            }
            LibCall::Free => format!("free({});", self.ident()),
            LibCall::Printf => format!("printf(\"{} %d\\n\", {});", self.ident(), self.scalar()),
            LibCall::Calloc => {
                let p = self.ident();
                let n = self.scalar();
                format!("char *{p} = calloc({n}, 1);")
            }
            LibCall::Strlen => {
                let s = self.ident();
                let n = self.scalar();
                format!("{n} = strlen({s});")
            }
            LibCall::Fprintf => format!("fprintf({}, \"bad {}\\n\");", self.ident(), self.ident()),
            LibCall::Fread => {
                let (b, n, fp) = (self.ident(), self.scalar(), self.ident());
                format!("fread({b}, 1, {n}, {fp});")
            }
            LibCall::Strcmp => {
                let (s, dst) = (self.ident(), self.scalar());
                format!("{dst} = strcmp({s}, \"{}\");", self.ident())
            }
        };
        self.emit(line);
    }

    fn block(&mut self, lo: usize, hi: usize) {
        self.depth += 1;
        for _ in 0..self.rng.random_range(lo..=hi) {
            self.filler(false);
        }
        self.depth -= 1;
    }

    /// The copy idiom; guarded unless `unsafe_variant`.
    fn copy_idiom(&mut self, src: &str, len: &str, unsafe_variant: bool) {
        let buf = self.ident();
        let size = self.rng.random_range(8..129);
        self.emit(format!("char {buf}[{size}];"));
        let call = self.pick_weighted(self.style.copy_calls);
        if !unsafe_variant {
            if call == "strcpy" {
                self.emit(format!("if (strlen({src}) >= {size}) {{"));
            } else {
                self.emit(format!("if ({len} > {size}) {{"));
            }
            self.depth += 1;
            self.emit("return -1;".into());
            self.depth -= 1;
            self.emit("}".into());
        }
        if call == "strcpy" {
            self.emit(format!("strcpy({buf}, {src});"));
        } else {
            self.emit(format!("{call}({buf}, {src}, {len});"));
        }
    }

    /// The indexing idiom; the loop bound is `<=` when `unsafe_variant`.
    fn index_idiom(&mut self, unsafe_variant: bool) {
        let arr = self.ident();
        let i = self.ident();
        let size = self.rng.random_range(4..65);
        let cmp = if unsafe_variant { "<=" } else { "<" };
        let value = self.scalar();
        self.emit(format!("int {arr}[{size}];"));
        if self.rng.random_bool(self.style.while_loops) {
            self.emit(format!("int {i} = 0;"));
            self.emit(format!("while ({i} {cmp} {size}) {{"));
            self.depth += 1;
            self.emit(format!("{arr}[{i}] = {value};"));
            self.emit(format!("{i}++;"));
            self.depth -= 1;
        } else {
            self.emit(format!("for (int {i} = 0; {i} {cmp} {size}; {i}++) {{"));
            self.depth += 1;
            self.emit(format!("{arr}[{i}] = {value};"));
            self.depth -= 1;
        }
        self.emit("}".into());
    }

    fn function(&mut self, vulnerable: bool) -> String {
        let name = self.func_name();
        let src = self.ident();
        let len = self.ident();
        let ctx = self.ident();
        let ret = *["int", "static int", "int"].choose(self.rng).expect("ret");
        let n_filler = self.rng.random_range(self.style.filler.0..=self.style.filler.1);
        // idiom placement: 0 = none, otherwise position in the filler sequence
        let idiom = if vulnerable || self.rng.random_bool(0.4) {
            let kind = if self.rng.random_bool(0.5) { Idiom::UncheckedCopy } else { Idiom::IndexPastBound };
            Some((kind, self.rng.random_range(0..=n_filler)))
        } else {
            None
        };

        let mut code = String::new();
        if self.rng.random_bool(0.3) {
            let _ = writeln!(code, "/* {} */", self.style.words.choose(self.rng).expect("words"));
        }
        let _ = writeln!(code, "{ret} {name}(const char *{src}, int {len}, void *{ctx})\n{{");
        for k in 0..=n_filler {
            if let Some((kind, at)) = idiom {
                if at == k {
                    match kind {
                        Idiom::UncheckedCopy => self.copy_idiom(&src, &len, vulnerable),
                        Idiom::IndexPastBound => self.index_idiom(vulnerable),
                    }
                }
            }
            if k < n_filler {
                self.filler(true);
            }
        }
        let rv = if self.rng.random_bool(0.5) { "0".to_owned() } else { self.scalar() };
        self.emit(format!("return {rv};"));
        for l in &self.lines {
            code.push_str(l);
            code.push('\n');
        }
        code.push_str("}\n");
        code
    }
}
