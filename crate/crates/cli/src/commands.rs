use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dam2p::corpus::{generate_corpus, write_dataset, CorpusSpec, DomainStyle};
use dam2p::kernel::FeatureMap;
use dam2p::metrics::{MetricsReport, Table};
use dam2p::preproc::{build_vocab, load_functions, write_preprocessed, PreprocessedRecord, Vocab};
use dam2p::trainer::{self, labeled_records, LabeledFunction, Model, SweepGrid};
use dam2p::{Error, Result};

use crate::config::{output_dir, output_dir_from, Config};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_owned(), source: e })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_owned(), source: e })
}

/// CSV prefixed with the config echo.
fn write_csv(path: &Path, cfg: &Config, body: &str) -> Result<()> {
    write_file(path, &format!("{}\n{body}", cfg.header()))
}

/// JSONL files must stay one record per line, so their config goes next to
/// them.
fn write_sidecar(path: &Path, json: &str) -> Result<()> {
    let mut name = path.as_os_str().to_owned();
    name.push(".config.json");
    write_file(&PathBuf::from(name), json)
}

fn load_labeled(path: &Path) -> Result<Vec<LabeledFunction>> {
    labeled_records(&load_functions(path)?)
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::Validation(format!("missing {key}: pass --{key} or set it in the config")))
}

fn domains(source: &[LabeledFunction], target: &[LabeledFunction]) -> (String, String) {
    let tag = |fs: &[LabeledFunction]| fs.first().map(|f| f.domain.clone()).unwrap_or_default();
    (tag(source), tag(target))
}

pub fn gen(n: usize, ratio: f64, style: DomainStyle, seed: u64, file: Option<PathBuf>, dir: Option<&Path>) -> Result<()> {
    let spec = CorpusSpec { n_functions: n, vulnerable_ratio: ratio, domain_style: style, seed };
    let corpus = generate_corpus(&spec)?;
    let path = file.unwrap_or_else(|| output_dir_from(dir).join(format!("{}.jsonl", style.tag())));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_dataset(&path, &corpus)?;
    write_sidecar(&path, &serde_json::to_string(&spec)?)?;
    let vulnerable = corpus.iter().filter(|f| f.label == Some(1)).count();
    println!("wrote {} functions ({vulnerable} vulnerable) to {}", corpus.len(), path.display());
    Ok(())
}

pub fn preprocess(
    input: &Path,
    file: Option<PathBuf>,
    vocab_out: Option<PathBuf>,
    min_count: usize,
    dir: Option<&Path>,
) -> Result<()> {
    let records = load_functions(input)?;
    let path = file.unwrap_or_else(|| {
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into());
        output_dir_from(dir).join(format!("{stem}.pre.jsonl"))
    });
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_preprocessed(&path, &records)?;
    let tokens: usize = records.iter().map(|r| r.statements.iter().map(Vec::len).sum::<usize>()).sum();
    println!("wrote {} functions ({tokens} tokens) to {}", records.len(), path.display());
    if let Some(vpath) = vocab_out {
        let tokenized: Vec<_> = records.iter().map(PreprocessedRecord::tokenized).collect();
        let vocab = build_vocab(&tokenized, min_count)?;
        if let Some(parent) = vpath.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        vocab.save(&vpath)?;
        println!("wrote {} vocabulary entries to {}", vocab.len(), vpath.display());
    }
    Ok(())
}

pub fn train(cfg: &Config) -> Result<()> {
    let source = load_labeled(require(&cfg.source, "source")?)?;
    let target = load_labeled(require(&cfg.target, "target")?)?;
    let mut data = trainer::prepare_run(&source, &target, cfg.train.seed, cfg.train.min_count)?;
    if let Some(vpath) = &cfg.vocab {
        data.vocab = Vocab::load(vpath)?;
    }
    let out = trainer::train(&cfg.train, &data.vocab, &data.source_train, &data.source_val, &data.target_train)?;
    let dir = output_dir(cfg);
    ensure_dir(&dir)?;

    out.checkpoint()?.save(&dir.join("checkpoint.json"))?;
    write_csv(&dir.join("history.csv"), cfg, &out.history.to_csv())?;
    data.vocab.save(&dir.join("vocab.txt"))?;
    let test: Vec<PreprocessedRecord> = data
        .target_test
        .iter()
        .map(|f| PreprocessedRecord {
            id: f.id.clone(),
            statements: f.statements.clone(),
            label: Some(f.label()),
            domain: f.domain.clone(),
        })
        .collect();
    let test_path = dir.join("target_test.jsonl");
    write_preprocessed(&test_path, &test)?;
    write_sidecar(&test_path, &cfg.to_json())?;

    let (cm, metrics) = trainer::evaluate(&out.model, &data.target_test, out.model.threshold)?;
    let (src, tgt) = domains(&source, &target);
    let report = MetricsReport { method: cfg.train.mode.name().into(), source: src, target: tgt, metrics, seed: Some(cfg.train.seed) };
    println!(
        "best step {} (source val F1 {:.2}%), threshold {:.6}",
        out.best_step,
        100.0 * out.best_val_f1,
        out.model.threshold
    );
    println!("target test: tp={} fp={} tn={} fn={}", cm.tp, cm.fp, cm.tn, cm.fn_);
    print!("{}", Table(&[report]));
    println!("outputs in {}", dir.display());
    Ok(())
}

pub fn eval(checkpoint: &Path, dataset: &Path, threshold: Option<f64>, dir: Option<&Path>) -> Result<()> {
    if threshold.is_some_and(f64::is_nan) {
        return Err(Error::Validation("threshold must not be NaN".into()));
    }
    let model = Model::load(checkpoint)?;
    let functions = load_labeled(dataset)?;
    if functions.is_empty() {
        return Err(Error::Validation(format!("{}: no functions", dataset.display())));
    }
    let thr = threshold.unwrap_or(model.threshold);
    let (cm, metrics) = trainer::evaluate(&model, &functions, thr)?;
    let gamma = match &model.feature_map {
        Some(FeatureMap::Rff(f)) => format!("{}", f.gamma()),
        _ => "none".into(),
    };
    let report = MetricsReport {
        method: model.config.mode.name().into(),
        source: model.domains.0.clone(),
        target: functions[0].domain.clone(),
        metrics,
        seed: Some(model.config.seed),
    };
    let header = format!("# checkpoint: {} gamma={gamma} threshold={thr}", checkpoint.display());
    println!("{header}");
    println!("tp={} fp={} tn={} fn={}", cm.tp, cm.fp, cm.tn, cm.fn_);
    print!("{}", Table(std::slice::from_ref(&report)));
    let path = output_dir_from(dir).join("eval.csv");
    write_file(&path, &format!("{header}\n{}", dam2p::metrics::to_csv(&[report])))
}

pub fn ablate(cfg: &Config) -> Result<()> {
    let source = load_labeled(require(&cfg.source, "source")?)?;
    let target = load_labeled(require(&cfg.target, "target")?)?;
    let (src, tgt) = domains(&source, &target);
    let results = trainer::ablate(&cfg.train, &source, &target)?;
    let mut all = Vec::new();
    let mut means = Vec::new();
    for report in results.values() {
        let rows = report.reports(&src, &tgt);
        means.push(rows.last().expect("mean row").clone());
        all.extend(rows);
    }
    print!("{}", Table(&means));
    let mut summary = String::new();
    for (mode, report) in &results {
        let _ = writeln!(summary, "{mode}: F1 {:.2} +- {:.2}", 100.0 * report.mean.f1, 100.0 * report.f1_std);
    }
    print!("{summary}");
    let dir = output_dir(cfg);
    ensure_dir(&dir)?;
    write_csv(&dir.join("ablation.csv"), cfg, &dam2p::metrics::to_csv(&all))
}

pub fn sweep(cfg: &Config, lambda: Vec<f64>, alpha: Vec<f64>, hidden: Vec<usize>) -> Result<()> {
    let source = load_labeled(require(&cfg.source, "source")?)?;
    let target = load_labeled(require(&cfg.target, "target")?)?;
    let flags = SweepGrid { lambda, alpha, hidden };
    let grid = if flags == SweepGrid::default() { cfg.grid.clone().unwrap_or_default() } else { flags };
    let rows = trainer::sweep(&cfg.train, &grid, &source, &target)?;
    let csv = trainer::sweep_csv(&rows);
    print!("{csv}");
    let dir = output_dir(cfg);
    ensure_dir(&dir)?;
    write_csv(&dir.join("sweep.csv"), cfg, &csv)
}

pub fn export_latents(checkpoint: &Path, dataset: &Path, file: Option<PathBuf>, dir: Option<&Path>) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let records = load_functions(dataset)?;
    let encoded: Vec<_> = records.iter().map(|r| model.encode(&r.statements)).collect();
    let (latents, scores) = model.latents_and_scores(&encoded)?;
    let width = latents.first().map_or(0, Vec::len);
    let mut out = format!("# checkpoint: {}\nid,domain,label,score", checkpoint.display());
    for j in 0..width {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for ((rec, z), s) in records.iter().zip(&latents).zip(&scores) {
        let label = rec.label.map(|l| l.to_string()).unwrap_or_default();
        let _ = write!(out, "{},{},{label},{s}", rec.id, rec.domain);
        for v in z {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    let path = file.unwrap_or_else(|| output_dir_from(dir).join("latents.csv"));
    write_file(&path, &out)?;
    println!("wrote {} latents to {}", records.len(), path.display());
    Ok(())
}
