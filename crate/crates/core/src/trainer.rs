//! The combined objective, alternating adversarial training, model selection,
//! multi-run experiments and hyper-parameter sweeps.
//!
//! Each step runs the generator once over the source and target batches
//! together. The discriminator then takes an ascent step on the adversarial
//! term using those latents, detached. After that the full objective is
//! rebuilt on the same tape against the updated discriminator, and
//! everything else takes a descent step.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_gradients, Adam, Bound, Checkpoint, Params, Tape, Tensor, Var};
use crate::config::{Mode, Threshold, TrainConfig};
use crate::corpus::split_dataset;
use crate::error::{Error, Result};
use crate::kernel::{
    margin_loss, margins, median_heuristic_gamma, sample_frequencies, FeatureMap, KernelParams, RffFrequencies,
    TargetTerm, RHO_NAME, W_NAME,
};
use crate::metrics::{compute_metrics, confusion, mean_metrics, mean_std, ConfusionMatrix, Metrics, MetricsReport};
use crate::nets::{
    discriminator, gan_objective, generator_batch, head_loss, head_score, init_discriminator, init_generator,
    init_head, EncodedFunction,
};
use crate::preproc::{build_vocab, PreprocessedRecord, TokenizedFunction, Vocab};

/// Per-thread counters of label reads, keyed by domain.
pub mod audit {
    use std::cell::RefCell;
    use std::collections::BTreeMap;

    thread_local! {
        static READS: RefCell<BTreeMap<String, u64>> = const { RefCell::new(BTreeMap::new()) };
    }

    pub(crate) fn record(domain: &str) {
        READS.with(|r| *r.borrow_mut().entry(domain.to_owned()).or_default() += 1);
    }

    pub fn label_reads(domain: &str) -> u64 {
        READS.with(|r| r.borrow().get(domain).copied().unwrap_or(0))
    }

    pub fn reset() {
        READS.with(|r| r.borrow_mut().clear());
    }
}

/// A function whose label may be used. Every label access is counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledFunction {
    pub id: String,
    pub domain: String,
    pub statements: Vec<Vec<String>>,
    label: u8,
}

impl LabeledFunction {
    pub fn new(id: String, domain: String, statements: Vec<Vec<String>>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::Validation(format!("{id}: label must be 0 or 1, got {label}")));
        }
        Ok(LabeledFunction { id, domain, statements, label })
    }

    pub fn from_record(rec: &PreprocessedRecord) -> Result<Self> {
        let label = rec.label.ok_or_else(|| Error::Validation(format!("{}: record has no label", rec.id)))?;
        Self::new(rec.id.clone(), rec.domain.clone(), rec.statements.clone(), label)
    }

    pub fn label(&self) -> u8 {
        audit::record(&self.domain);
        self.label
    }

    /// The same function with its label dropped, without reading it.
    pub fn strip_label(&self) -> TargetFunction {
        TargetFunction { id: self.id.clone(), domain: self.domain.clone(), statements: self.statements.clone() }
    }
}

/// An unlabeled function: the only form in which target data reaches
/// training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetFunction {
    pub id: String,
    pub domain: String,
    pub statements: Vec<Vec<String>>,
}

impl TargetFunction {
    /// Panics if the record still carries a label.
    pub fn from_record(rec: &PreprocessedRecord) -> Self {
        assert!(rec.label.is_none(), "labeled target record {} entered the training path", rec.id);
        TargetFunction { id: rec.id.clone(), domain: rec.domain.clone(), statements: rec.statements.clone() }
    }
}

pub fn labeled_records(records: &[PreprocessedRecord]) -> Result<Vec<LabeledFunction>> {
    records.iter().map(LabeledFunction::from_record).collect()
}

/// One source mini-batch with its labels already read.
#[derive(Clone, Debug)]
pub struct SourceBatch<'a> {
    pub inputs: Vec<&'a EncodedFunction>,
    pub labels: Vec<u8>,
}

/// Parameters and optimizer states of a run in progress.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Embedding, generator and classifier (kernel or head) weights.
    pub model: Params,
    /// Discriminator weights; empty in modes without the adversarial term.
    pub disc: Params,
    pub model_opt: Adam,
    pub disc_opt: Adam,
    /// Feature map of the kernel classifier; `None` in head modes.
    pub feature_map: Option<FeatureMap>,
}

impl TrainState {
    /// Fresh weights for `cfg.mode`; the kernel map is left unset.
    pub fn init(cfg: &TrainConfig, vocab_len: usize, rng: &mut ChaCha8Rng) -> Self {
        let dims = cfg.dims(vocab_len);
        let mut model = init_generator(&dims, rng);
        if cfg.mode.uses_kernel() {
            model.merge(KernelParams::init(2 * cfg.rff_features, rng).to_params());
        } else {
            model.merge(init_head(&dims, rng));
        }
        let disc = if cfg.mode.uses_adversary() { init_discriminator(&dims, rng) } else { Params::new() };
        TrainState { model, disc, model_opt: Adam::new(cfg.lr), disc_opt: Adam::new(cfg.lr), feature_map: None }
    }
}

/// Values of the objective's parts on one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveParts {
    /// Classifier loss: the hinge objective, or cross-entropy for the head.
    pub loss: f64,
    /// Adversarial term, when the mode uses it.
    pub adversarial: Option<f64>,
    pub objective: f64,
}

/// `I = L + α·H`.
pub fn combine(loss: f64, adversarial: f64, alpha: f64) -> f64 {
    loss + alpha * adversarial
}

/// Tape nodes of the objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveNodes {
    pub loss: Var,
    pub adversarial: Option<Var>,
    pub objective: Var,
    pub source_latents: Var,
    pub target_latents: Option<Var>,
    /// Kernel features of the source batch.
    pub source_features: Option<Var>,
}

/// Latents of the source rows and, if requested, the target rows, from one
/// generator pass.
fn latents(
    tape: &mut Tape,
    bound: &Bound,
    source: &[&EncodedFunction],
    target: Option<&[&EncodedFunction]>,
) -> (Var, Option<Var>) {
    match target {
        Some(t) if !t.is_empty() => {
            let all: Vec<&EncodedFunction> = source.iter().chain(t).copied().collect();
            let z = generator_batch(tape, bound, &all);
            let zs = tape.slice_rows(z, 0, source.len());
            let zt = tape.slice_rows(z, source.len(), all.len());
            (zs, Some(zt))
        }
        _ => (generator_batch(tape, bound, source), None),
    }
}

/// Builds the mode's objective on `tape`. `bound` must hold the model
/// parameters and, in adversarial modes, the discriminator.
pub fn build_objective(
    tape: &mut Tape,
    bound: &Bound,
    feature_map: Option<&FeatureMap>,
    source: &SourceBatch,
    target: &[&EncodedFunction],
    cfg: &TrainConfig,
) -> Result<ObjectiveNodes> {
    if source.inputs.is_empty() {
        return Err(Error::Validation("empty source batch".into()));
    }
    let (zs, zt) = latents(tape, bound, &source.inputs, cfg.mode.uses_target().then_some(target));
    build_objective_on_latents(tape, bound, feature_map, source, target, zs, zt, cfg)
}

fn bind_all(state: &TrainState, tape: &mut Tape, trainable: bool) -> Bound {
    let mut bound = state.model.bind_prefix(tape, "", trainable);
    bound.extend(state.disc.bind_prefix(tape, "", trainable));
    bound
}

/// Evaluates the objective without updating anything.
pub fn combined_objective(
    state: &TrainState,
    source: &SourceBatch,
    target: &[&EncodedFunction],
    cfg: &TrainConfig,
) -> Result<ObjectiveParts> {
    let mut tape = Tape::new();
    let bound = bind_all(state, &mut tape, false);
    let nodes = build_objective(&mut tape, &bound, state.feature_map.as_ref(), source, target, cfg)?;
    tape.check()?;
    Ok(ObjectiveParts {
        loss: tape.value(nodes.loss).item(),
        adversarial: nodes.adversarial.map(|h| tape.value(h).item()),
        objective: tape.value(nodes.objective).item(),
    })
}

/// Logged quantities of one step, measured before its updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub parts: ObjectiveParts,
    pub source_margin: Option<f64>,
    pub target_margin: Option<f64>,
}

/// One alternating step: discriminator ascent on the adversarial term, then
/// descent of everything else on the full objective.
pub fn train_step(
    state: &mut TrainState,
    source: &SourceBatch,
    target: &[&EncodedFunction],
    cfg: &TrainConfig,
) -> Result<StepStats> {
    let mode = cfg.mode;
    if source.inputs.is_empty() {
        return Err(Error::Validation("empty source batch".into()));
    }
    let mut tape = Tape::new();
    let model_bound = state.model.bind_prefix(&mut tape, "", true);
    let (zs, zt) = latents(&mut tape, &model_bound, &source.inputs, mode.uses_target().then_some(target));
    tape.check()?;

    if mode.uses_adversary() {
        let zt = zt.ok_or_else(|| Error::Validation(format!("mode {mode} needs a non-empty target batch")))?;
        discriminator_step(state, tape.value(zs), tape.value(zt), cfg)?;
    }

    let mut bound = model_bound.clone();
    bound.extend(state.disc.bind_prefix(&mut tape, "", false));
    let nodes = build_objective_on_latents(&mut tape, &bound, state.feature_map.as_ref(), source, target, zs, zt, cfg)?;
    tape.check()?;

    let parts = ObjectiveParts {
        loss: tape.value(nodes.loss).item(),
        adversarial: nodes.adversarial.map(|h| tape.value(h).item()),
        objective: tape.value(nodes.objective).item(),
    };
    let (source_margin, target_margin) = match nodes.source_features {
        Some(phi) => batch_margins(&state.model, tape.value(phi), &source.labels)?,
        None => (None, None),
    };

    let mut grads = tape.backward(nodes.objective)?.collect(&tape, &model_bound);
    clip_gradients(&mut grads, cfg.clip_norm);
    state.model_opt.step(&mut state.model, &grads)?;
    Ok(StepStats { parts, source_margin, target_margin })
}

/// The ascent phase: one clipped Adam step of the discriminator on the
/// adversarial term, with the latents held fixed. Returns the term's value
/// before the update.
pub fn discriminator_step(state: &mut TrainState, source: &Tensor, target: &Tensor, cfg: &TrainConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = state.disc.bind_prefix(&mut tape, "", true);
    let s = tape.constant(source.clone());
    let t = tape.constant(target.clone());
    let ds = discriminator(&mut tape, &bound, s);
    let dt = discriminator(&mut tape, &bound, t);
    let h = gan_objective(&mut tape, ds, dt);
    let ascent = tape.neg(h);
    tape.check()?;
    let mut grads = tape.backward(ascent)?.collect(&tape, &bound);
    clip_gradients(&mut grads, cfg.clip_norm);
    state.disc_opt.step(&mut state.disc, &grads)?;
    Ok(tape.value(h).item())
}

/// [`build_objective`] reusing latents already on the tape.
#[allow(clippy::too_many_arguments)]
fn build_objective_on_latents(
    tape: &mut Tape,
    bound: &Bound,
    feature_map: Option<&FeatureMap>,
    source: &SourceBatch,
    target: &[&EncodedFunction],
    zs: Var,
    zt: Option<Var>,
    cfg: &TrainConfig,
) -> Result<ObjectiveNodes> {
    let mode = cfg.mode;
    if mode.uses_target() && zt.is_none() {
        return Err(Error::Validation(format!("mode {mode} needs a non-empty target batch")));
    }
    let (loss, source_features) = if mode.uses_kernel() {
        let map = feature_map.ok_or_else(|| Error::Validation("kernel mode without a feature map".into()))?;
        let phi_s = map.apply(tape, zs);
        let term = match zt {
            Some(zt) if mode.uses_target_hinge() && cfg.lambda != 0.0 => TargetTerm::Hinge(map.apply(tape, zt)),
            _ => TargetTerm::CountOnly(target.len()),
        };
        let l = margin_loss(tape, phi_s, &source.labels, term, bound.var(W_NAME), bound.var(RHO_NAME), cfg.lambda)?;
        (l.total, Some(phi_s))
    } else {
        let score = head_score(tape, bound, zs);
        let y: Vec<f64> = source.labels.iter().map(|&l| f64::from(l)).collect();
        (head_loss(tape, score, &y), None)
    };
    let adversarial = match zt {
        Some(zt) if mode.uses_adversary() => {
            let ds = discriminator(tape, bound, zs);
            let dt = discriminator(tape, bound, zt);
            Some(gan_objective(tape, ds, dt))
        }
        _ => None,
    };
    let objective = match adversarial {
        Some(h) => {
            let scaled = tape.scale(h, cfg.alpha);
            tape.add(loss, scaled)
        }
        None => loss,
    };
    Ok(ObjectiveNodes { loss, adversarial, objective, source_latents: zs, target_latents: zt, source_features })
}

fn batch_margins(model: &Params, phi: &Tensor, labels: &[u8]) -> Result<(Option<f64>, Option<f64>)> {
    let kp = KernelParams::from_params(model)?;
    if kp.norm() == 0.0 {
        return Ok((None, None));
    }
    let vulnerable: Vec<Vec<f64>> =
        labels.iter().enumerate().filter(|(_, &y)| y == 1).map(|(i, _)| phi.row_slice(i).to_vec()).collect();
    if vulnerable.is_empty() {
        return Ok((None, Some(kp.rho / kp.norm())));
    }
    let (s, t) = margins(&kp, &vulnerable)?;
    Ok((Some(s), Some(t)))
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub adversarial: Option<f64>,
    pub objective: f64,
    pub source_margin: Option<f64>,
    pub target_margin: Option<f64>,
    /// Source-validation F1, filled on the last step of each epoch.
    pub val_f1: Option<f64>,
}

/// Append-only per-step log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    records: Vec<StepRecord>,
}

pub const HISTORY_HEADER: &str = "step,L,H,I,source_margin,target_margin,val_F1";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunHistory {
    pub fn push(&mut self, record: StepRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.step > last.step, "history steps must increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn set_val_f1(&mut self, f1: f64) {
        if let Some(last) = self.records.last_mut() {
            last.val_f1 = Some(f1);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step,
                r.loss,
                cell(r.adversarial),
                r.objective,
                cell(r.source_margin),
                cell(r.target_margin),
                cell(r.val_f1)
            ));
        }
        out
    }
}

/// F1-maximizing threshold on `scores`: halfway between the lowest score
/// still called vulnerable and the next lower score. Ties prefer fewer
/// positive calls. Returns 0 when there are no positives.
pub fn calibrate_threshold(scores: &[f64], labels: &[u8]) -> f64 {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || scores.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (-1.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + (positives - tp)) as f64;
        if f1 > best.0 {
            let next = order.get(i).map(|&j| scores[j]);
            best = (f1, next.map_or(s, |n| 0.5 * (s + n)));
        }
    }
    best.1
}

/// A trained classifier with everything needed to score new functions.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    /// Domain tags of the training data, as `(source, target)`.
    pub domains: (String, String),
    pub vocab: Vocab,
    pub params: Params,
    pub feature_map: Option<FeatureMap>,
    pub threshold: f64,
}

const EVAL_CHUNK: usize = 256;
const OMEGA_NAME: &str = "kernel.omega";
const GAMMA_NAME: &str = "kernel.gamma";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: TrainConfig,
    vocab: Vec<String>,
    threshold: Threshold,
    mode: Mode,
    source_domain: String,
    target_domain: String,
    best_step: u64,
    best_val_f1: f64,
}

impl Model {
    pub fn encode(&self, statements: &[Vec<String>]) -> EncodedFunction {
        EncodedFunction::encode(statements, &self.vocab, self.config.max_len)
    }

    /// Latents and decision scores, in input order.
    pub fn latents_and_scores(&self, functions: &[EncodedFunction]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut zs = Vec::with_capacity(functions.len());
        let mut scores = Vec::with_capacity(functions.len());
        for chunk in functions.chunks(EVAL_CHUNK) {
            let refs: Vec<&EncodedFunction> = chunk.iter().collect();
            let mut tape = Tape::new();
            let bound = self.params.bind_prefix(&mut tape, "", false);
            let z = generator_batch(&mut tape, &bound, &refs);
            let score = match &self.feature_map {
                Some(map) => {
                    let phi = map.apply(&mut tape, z);
                    let raw = tape.matmul(phi, bound.var(W_NAME));
                    let neg_rho = tape.neg(bound.var(RHO_NAME));
                    tape.add_broadcast(raw, neg_rho)
                }
                None => head_score(&mut tape, &bound, z),
            };
            tape.check()?;
            let zv = tape.value(z);
            zs.extend((0..zv.rows()).map(|r| zv.row_slice(r).to_vec()));
            scores.extend_from_slice(tape.value(score).data());
        }
        Ok((zs, scores))
    }

    pub fn scores(&self, functions: &[EncodedFunction]) -> Result<Vec<f64>> {
        Ok(self.latents_and_scores(functions)?.1)
    }

    pub fn predict_with(&self, functions: &[EncodedFunction], threshold: f64) -> Result<Vec<u8>> {
        Ok(self.scores(functions)?.into_iter().map(|s| u8::from(s >= threshold)).collect())
    }

    pub fn predict(&self, functions: &[EncodedFunction]) -> Result<Vec<u8>> {
        self.predict_with(functions, self.threshold)
    }

    pub fn kernel_params(&self) -> Option<KernelParams> {
        self.feature_map.as_ref().and_then(|_| KernelParams::from_params(&self.params).ok())
    }

    fn checkpoint(&self, best_step: u64, best_val_f1: f64) -> Result<Checkpoint> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            threshold: Threshold::Fixed(self.threshold),
            mode: self.config.mode,
            source_domain: self.domains.0.clone(),
            target_domain: self.domains.1.clone(),
            best_step,
            best_val_f1,
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta)?);
        for (name, t) in self.params.iter() {
            ck.insert(name.clone(), t);
        }
        match &self.feature_map {
            Some(FeatureMap::Rff(f)) => {
                ck.insert(OMEGA_NAME, f.omega());
                ck.insert(GAMMA_NAME, &Tensor::scalar(f.gamma()));
            }
            Some(FeatureMap::Linear { .. }) => {
                return Err(Error::Checkpoint("the linear test map is not stored in checkpoints".into()))
            }
            None => {}
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta =
            serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint(format!("meta: {e}")))?;
        let vocab = Vocab::from_tokens(meta.vocab)?;
        let threshold = meta
            .threshold
            .fixed()
            .ok_or_else(|| Error::Checkpoint("checkpoint threshold must be a number".into()))?;
        let mut params = Params::new();
        for name in ck.params.keys().filter(|n| *n != OMEGA_NAME && *n != GAMMA_NAME) {
            params.insert(name.clone(), ck.tensor(name)?);
        }
        let feature_map = if meta.mode.uses_kernel() {
            let omega = ck.tensor(OMEGA_NAME)?;
            let gamma = ck.tensor(GAMMA_NAME)?.item();
            Some(FeatureMap::Rff(RffFrequencies::from_omega(omega, gamma)?))
        } else {
            None
        };
        let model = Model {
            config: meta.config,
            domains: (meta.source_domain, meta.target_domain),
            vocab,
            params,
            feature_map,
            threshold,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let dims = self.config.dims(self.vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut expected = init_generator(&dims, &mut rng);
        if let Some(map) = &self.feature_map {
            expected.merge(KernelParams { w: vec![0.0; map.feature_dim()], rho: 0.0 }.to_params());
            if let FeatureMap::Rff(f) = map {
                if f.input_dim() != self.config.latent {
                    return Err(Error::Checkpoint(format!("{OMEGA_NAME}: {} columns", f.input_dim())));
                }
            }
        } else {
            expected.merge(init_head(&dims, &mut rng));
        }
        for (name, t) in expected.iter() {
            let got = self.params.get(name).ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", got.shape(), t.shape())));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The parameters of the epoch with the best source-validation F1.
    pub model: Model,
    pub history: RunHistory,
    pub best_step: u64,
    pub best_val_f1: f64,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        self.model.checkpoint(self.best_step, self.best_val_f1)
    }
}

/// Mixes a stream index into a seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const GAMMA_SAMPLE: usize = 100;

/// Trains one model. Target data arrives label-free by construction.
pub fn train(
    cfg: &TrainConfig,
    vocab: &Vocab,
    source_train: &[LabeledFunction],
    source_val: &[LabeledFunction],
    target: &[TargetFunction],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source_train.is_empty() || source_val.is_empty() {
        return Err(Error::Validation("source train and validation splits must be non-empty".into()));
    }
    if target.is_empty() {
        return Err(Error::Validation("target split must be non-empty".into()));
    }
    if vocab.is_empty() {
        return Err(Error::Validation("empty vocabulary".into()));
    }
    let domains = (source_train[0].domain.clone(), target[0].domain.clone());
    let encode = |s: &[Vec<String>]| EncodedFunction::encode(s, vocab, cfg.max_len);
    let src: Vec<EncodedFunction> = source_train.iter().map(|f| encode(&f.statements)).collect();
    let src_labels: Vec<u8> = source_train.iter().map(LabeledFunction::label).collect();
    let val: Vec<EncodedFunction> = source_val.iter().map(|f| encode(&f.statements)).collect();
    let val_labels: Vec<u8> = source_val.iter().map(LabeledFunction::label).collect();
    let tgt: Vec<EncodedFunction> = target.iter().map(|f| encode(&f.statements)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainState::init(cfg, vocab.len(), &mut rng);
    if cfg.mode.uses_kernel() {
        let gamma = match cfg.gamma {
            Some(g) => g,
            None => {
                let sample: Vec<EncodedFunction> =
                    src.iter().take(GAMMA_SAMPLE).chain(tgt.iter().take(GAMMA_SAMPLE)).cloned().collect();
                let mut tape = Tape::new();
                let bound = state.model.bind_prefix(&mut tape, "", false);
                let refs: Vec<&EncodedFunction> = sample.iter().collect();
                let z = generator_batch(&mut tape, &bound, &refs);
                tape.check()?;
                let zv = tape.value(z);
                let points: Vec<Vec<f64>> = (0..zv.rows()).map(|r| zv.row_slice(r).to_vec()).collect();
                median_heuristic_gamma(&points)
            }
        };
        let freqs = sample_frequencies(cfg.latent, cfg.rff_features, gamma, rng.next_u64())?;
        state.feature_map = Some(FeatureMap::Rff(freqs));
    }

    let steps_per_epoch = src.len().max(tgt.len()).div_ceil(cfg.batch);
    let mut history = RunHistory::default();
    let mut best: Option<(f64, u64, Params, f64)> = None;
    let mut step: u64 = 0;
    let mut src_order: Vec<usize> = (0..src.len()).collect();
    let mut tgt_order: Vec<usize> = (0..tgt.len()).collect();
    let (mut src_cursor, mut tgt_cursor) = (0usize, 0usize);

    for _epoch in 0..cfg.epochs {
        src_order.shuffle(&mut rng);
        tgt_order.shuffle(&mut rng);
        let larger = src.len().max(tgt.len());
        for j in 0..steps_per_epoch {
            let count = cfg.batch.min(larger - j * cfg.batch);
            let s_idx = take_cyclic(&src_order, &mut src_cursor, count, src.len() == larger, j * cfg.batch);
            let t_idx = take_cyclic(&tgt_order, &mut tgt_cursor, count, tgt.len() == larger && src.len() != larger, j * cfg.batch);
            let batch = SourceBatch {
                inputs: s_idx.iter().map(|&i| &src[i]).collect(),
                labels: s_idx.iter().map(|&i| src_labels[i]).collect(),
            };
            let tbatch: Vec<&EncodedFunction> = t_idx.iter().map(|&i| &tgt[i]).collect();
            step += 1;
            let stats =
                train_step(&mut state, &batch, &tbatch, cfg).map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
            history.push(StepRecord {
                step,
                loss: stats.parts.loss,
                adversarial: stats.parts.adversarial,
                objective: stats.parts.objective,
                source_margin: stats.source_margin,
                target_margin: stats.target_margin,
                val_f1: None,
            });
        }

        let snapshot = Model {
            config: cfg.clone(),
            domains: domains.clone(),
            vocab: vocab.clone(),
            params: state.model.clone(),
            feature_map: state.feature_map.clone(),
            threshold: 0.0,
        };
        let scores = snapshot.scores(&val).map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
        let threshold = cfg.threshold.fixed().unwrap_or_else(|| calibrate_threshold(&scores, &val_labels));
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        let f1 = compute_metrics(&confusion(&preds, &val_labels)?).f1;
        history.set_val_f1(f1);
        if best.as_ref().is_none_or(|b| f1 > b.0) {
            best = Some((f1, step, state.model.clone(), threshold));
        }
    }

    let (best_val_f1, best_step, params, threshold) = best.expect("at least one epoch");
    let mut params = params;
    params.merge(state.disc.clone());
    let model = Model { config: cfg.clone(), domains, vocab: vocab.clone(), params, feature_map: state.feature_map, threshold };
    Ok(TrainOutcome { model, history, best_step, best_val_f1 })
}

/// The larger domain walks its shuffled order in place; the smaller one
/// cycles through its order with a cursor kept across steps and epochs.
fn take_cyclic(order: &[usize], cursor: &mut usize, count: usize, is_larger: bool, offset: usize) -> Vec<usize> {
    if is_larger {
        return order[offset..offset + count].to_vec();
    }
    (0..count)
        .map(|_| {
            let i = order[*cursor % order.len()];
            *cursor = (*cursor + 1) % order.len();
            i
        })
        .collect()
}

/// Splits and vocabulary of one run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub vocab: Vocab,
    pub source_train: Vec<LabeledFunction>,
    pub source_val: Vec<LabeledFunction>,
    pub target_train: Vec<TargetFunction>,
    pub target_test: Vec<LabeledFunction>,
}

/// 80/20 splits of both domains and a vocabulary over the two training
/// splits.
pub fn prepare_run(
    source: &[LabeledFunction],
    target: &[LabeledFunction],
    seed: u64,
    min_count: usize,
) -> Result<RunData> {
    let s = split_dataset(source, derive_seed(seed, 1))?;
    let t = split_dataset(target, derive_seed(seed, 2))?;
    let target_train: Vec<TargetFunction> = t.train.iter().map(LabeledFunction::strip_label).collect();
    let corpus: Vec<TokenizedFunction> = s
        .train
        .iter()
        .map(|f| &f.statements)
        .chain(target_train.iter().map(|f| &f.statements))
        .map(|st| TokenizedFunction { statements: st.clone(), ..Default::default() })
        .collect();
    let vocab = build_vocab(&corpus, min_count)?;
    Ok(RunData { vocab, source_train: s.train, source_val: s.heldout, target_train, target_test: t.heldout })
}

/// Confusion matrix and metrics of `model` on labeled functions.
pub fn evaluate(model: &Model, functions: &[LabeledFunction], threshold: f64) -> Result<(ConfusionMatrix, Metrics)> {
    let enc: Vec<EncodedFunction> = functions.iter().map(|f| model.encode(&f.statements)).collect();
    let preds = model.predict_with(&enc, threshold)?;
    let truth: Vec<u8> = functions.iter().map(LabeledFunction::label).collect();
    let cm = confusion(&preds, &truth)?;
    Ok((cm, compute_metrics(&cm)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub best_val_f1: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub runs: Vec<RunOutcome>,
    pub mean: Metrics,
    pub f1_std: f64,
}

impl ExperimentReport {
    /// Per-run rows followed by the mean row.
    pub fn reports(&self, source: &str, target: &str) -> Vec<MetricsReport> {
        let row = |metrics: Metrics, seed: Option<u64>| MetricsReport {
            method: self.mode.name().to_owned(),
            source: source.to_owned(),
            target: target.to_owned(),
            metrics,
            seed,
        };
        self.runs.iter().map(|r| row(r.metrics, Some(r.seed))).chain(std::iter::once(row(self.mean, None))).collect()
    }
}

/// `n_runs` independent runs with seeds `seed, seed+1, …`, each re-splitting
/// both domains, scored on the target test split.
pub fn run_experiment(
    cfg: &TrainConfig,
    source: &[LabeledFunction],
    target: &[LabeledFunction],
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.n_runs);
    for r in 0..cfg.n_runs as u64 {
        let seed = cfg.seed.wrapping_add(r);
        let data = prepare_run(source, target, seed, cfg.min_count)?;
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let out = train(&run_cfg, &data.vocab, &data.source_train, &data.source_val, &data.target_train)?;
        let (cm, metrics) = evaluate(&out.model, &data.target_test, out.model.threshold)?;
        runs.push(RunOutcome {
            seed,
            confusion: cm,
            metrics,
            best_val_f1: out.best_val_f1,
            threshold: out.model.threshold,
        });
    }
    let per_run: Vec<Metrics> = runs.iter().map(|r| r.metrics).collect();
    let (_, f1_std) = mean_std(&per_run.iter().map(|m| m.f1).collect::<Vec<_>>());
    Ok(ExperimentReport { mode: cfg.mode, mean: mean_metrics(&per_run), f1_std, runs })
}

/// Values tried for each swept setting; an empty axis keeps the config's
/// value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub hidden: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub alpha: f64,
    pub hidden: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
}

pub const SWEEP_HEADER: &str = "lambda,alpha,h,mean_F1,std_F1";

pub fn sweep(
    cfg: &TrainConfig,
    grid: &SweepGrid,
    source: &[LabeledFunction],
    target: &[LabeledFunction],
) -> Result<Vec<SweepRow>> {
    if grid.lambda.is_empty() && grid.alpha.is_empty() && grid.hidden.is_empty() {
        return Err(Error::Validation("sweep grid is empty".into()));
    }
    let or_default = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let lambdas = or_default(&grid.lambda, cfg.lambda);
    let alphas = or_default(&grid.alpha, cfg.alpha);
    let hiddens = if grid.hidden.is_empty() { vec![cfg.hidden] } else { grid.hidden.clone() };
    let mut rows = Vec::new();
    for &lambda in &lambdas {
        for &alpha in &alphas {
            for &hidden in &hiddens {
                let point = TrainConfig { lambda, alpha, hidden, ..cfg.clone() };
                let report = run_experiment(&point, source, target)?;
                rows.push(SweepRow { lambda, alpha, hidden, mean_f1: report.mean.f1, std_f1: report.f1_std });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lambda,
            r.alpha,
            r.hidden,
            crate::metrics::percent(r.mean_f1),
            crate::metrics::percent(r.std_f1)
        ));
    }
    out
}

/// Per-mode reports of [`run_experiment`], in [`Mode::ALL`] order.
pub fn ablate(
    cfg: &TrainConfig,
    source: &[LabeledFunction],
    target: &[LabeledFunction],
) -> Result<BTreeMap<Mode, ExperimentReport>> {
    Mode::ALL
        .into_iter()
        .map(|mode| Ok((mode, run_experiment(&TrainConfig { mode, ..cfg.clone() }, source, target)?)))
        .collect()
}
