//! Statement embedding, the bidirectional-LSTM generator, the domain
//! discriminator, the adversarial objective and the softmax classifier head
//! used by the non-kernel ablation modes.
//!
//! Parameter names:
//!
//! | name                    | shape      |
//! |-------------------------|------------|
//! | `embedding.W_si`        | V × E      |
//! | `gen.{fwd,bwd}.wx`      | E × 4h     |
//! | `gen.{fwd,bwd}.wh`      | h × 4h     |
//! | `gen.{fwd,bwd}.b`       | 1 × 4h     |
//! | `gen.fc1.{w,b}`         | 2h × d     |
//! | `gen.fc2.{w,b}`         | d × d      |
//! | `disc.l1.{w,b}`         | d × H      |
//! | `disc.l2.{w,b}`         | H × H      |
//! | `disc.out.{w,b}`        | H × 1      |
//! | `head.{l1,l2,out}.{w,b}`| d→H→H→2    |
//!
//! LSTM gate blocks are laid out `[input, forget, output, candidate]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Bound, Params, SparseRows, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::preproc::{TokenizedFunction, Vocab};

/// Discriminator outputs are clamped to `[PROB_EPS, 1 − PROB_EPS]` before any
/// logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub latent: usize,
    pub mlp_hidden: usize,
}

/// `L×E` statement embeddings of one function; rows past `true_length` are
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqEmbedding {
    pub matrix: Tensor,
    pub true_length: usize,
}

/// One function as sparse statement frequency rows, truncated to `L`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedFunction {
    pub statements: SparseRows,
}

impl EncodedFunction {
    pub fn encode(statements: &[Vec<String>], vocab: &Vocab, max_len: usize) -> Self {
        EncodedFunction {
            statements: statements.iter().take(max_len).map(|s| vocab.sparse_counts(s)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }
}

/// Row `j` is `freq(statement j)ᵀ · W_si` for the first `L` statements;
/// the rest is zero padding.
pub fn embed_function(tf: &TokenizedFunction, w_si: &Tensor, vocab: &Vocab, max_len: usize) -> SeqEmbedding {
    assert_eq!(w_si.rows(), vocab.len(), "embedding rows must match the vocabulary");
    let e = w_si.cols();
    let mut matrix = Tensor::zeros(max_len, e);
    let enc = EncodedFunction::encode(&tf.statements, vocab, max_len);
    for (j, row) in enc.statements.iter().enumerate() {
        for &(idx, count) in row {
            for c in 0..e {
                let v = matrix.get(j, c) + count * w_si.get(idx, c);
                matrix.set(j, c, v);
            }
        }
    }
    SeqEmbedding { matrix, true_length: enc.len() }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("positive dims")
}

fn fan_in_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, rows, cols, 1.0 / (rows as f64).sqrt())
}

fn init_lstm(params: &mut Params, prefix: &str, dims: &ModelDims, rng: &mut impl Rng) {
    let h = dims.hidden;
    params.insert(format!("{prefix}.wx"), fan_in_uniform(rng, dims.embed, 4 * h));
    params.insert(format!("{prefix}.wh"), fan_in_uniform(rng, h, 4 * h));
    let mut b = Tensor::zeros(1, 4 * h);
    for k in h..2 * h {
        b.set(0, k, 1.0);
    }
    params.insert(format!("{prefix}.b"), b);
}

fn init_dense(params: &mut Params, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    params.insert(format!("{prefix}.w"), fan_in_uniform(rng, fan_in, fan_out));
    params.insert(format!("{prefix}.b"), Tensor::zeros(1, fan_out));
}

/// Embedding matrix and generator weights.
pub fn init_generator(dims: &ModelDims, rng: &mut impl Rng) -> Params {
    let mut p = Params::new();
    p.insert("embedding.W_si", fan_in_uniform(rng, dims.vocab.max(1), dims.embed));
    init_lstm(&mut p, "gen.fwd", dims, rng);
    init_lstm(&mut p, "gen.bwd", dims, rng);
    init_dense(&mut p, "gen.fc1", 2 * dims.hidden, dims.latent, rng);
    init_dense(&mut p, "gen.fc2", dims.latent, dims.latent, rng);
    p
}

pub fn init_discriminator(dims: &ModelDims, rng: &mut impl Rng) -> Params {
    let mut p = Params::new();
    init_dense(&mut p, "disc.l1", dims.latent, dims.mlp_hidden, rng);
    init_dense(&mut p, "disc.l2", dims.mlp_hidden, dims.mlp_hidden, rng);
    init_dense(&mut p, "disc.out", dims.mlp_hidden, 1, rng);
    p
}

/// Two-hidden-layer softmax classifier over latents.
pub fn init_head(dims: &ModelDims, rng: &mut impl Rng) -> Params {
    let mut p = Params::new();
    init_dense(&mut p, "head.l1", dims.latent, dims.mlp_hidden, rng);
    init_dense(&mut p, "head.l2", dims.mlp_hidden, dims.mlp_hidden, rng);
    init_dense(&mut p, "head.out", dims.mlp_hidden, 2, rng);
    p
}

fn dense(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Var {
    let w = bound.var(&format!("{prefix}.w"));
    let b = bound.var(&format!("{prefix}.b"));
    let xw = tape.matmul(x, w);
    tape.add_broadcast(xw, b)
}

/// Hidden and cell state of a batch of LSTM sequences.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// One LSTM step for the whole batch.
pub fn lstm_cell(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var, state: LstmState) -> LstmState {
    let wx = bound.var(&format!("{prefix}.wx"));
    let wh = bound.var(&format!("{prefix}.wh"));
    let b = bound.var(&format!("{prefix}.b"));
    let h = tape.value(wh).rows();
    let xw = tape.matmul(x, wx);
    let hw = tape.matmul(state.h, wh);
    let z = tape.add(xw, hw);
    let z = tape.add_broadcast(z, b);
    let gi = tape.slice_cols(z, 0, h);
    let gf = tape.slice_cols(z, h, 2 * h);
    let go = tape.slice_cols(z, 2 * h, 3 * h);
    let gg = tape.slice_cols(z, 3 * h, 4 * h);
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let o = tape.sigmoid(go);
    let g = tape.tanh(gg);
    let fc = tape.mul(f, state.c);
    let ig = tape.mul(i, g);
    let c = tape.add(fc, ig);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    LstmState { h, c }
}

/// `keep ⊙ new + (1 − keep) ⊙ old` with a constant 0/1 row mask; exact for
/// both mask values.
fn blend(tape: &mut Tape, keep: Var, drop: Var, new: Var, old: Var) -> Var {
    let a = tape.mul(keep, new);
    let b = tape.mul(drop, old);
    tape.add(a, b)
}

/// Runs one LSTM direction over per-step inputs (each `B×E`). Sequence `b`
/// only advances on steps `t < lengths[b]`; its state is frozen elsewhere, so
/// padding never reaches the result. Returns the final hidden state `B×h`.
pub fn lstm_run(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    inputs: &[Var],
    lengths: &[usize],
    reverse: bool,
) -> Var {
    let h = tape.value(bound.var(&format!("{prefix}.wh"))).rows();
    let batch = lengths.len();
    let mut state = LstmState {
        h: tape.constant(Tensor::zeros(batch, h)),
        c: tape.constant(Tensor::zeros(batch, h)),
    };
    let steps: Vec<usize> =
        if reverse { (0..inputs.len()).rev().collect() } else { (0..inputs.len()).collect() };
    for t in steps {
        let next = lstm_cell(tape, bound, prefix, inputs[t], state);
        if lengths.iter().all(|&l| t < l) {
            state = next;
            continue;
        }
        let mut keep = Tensor::zeros(batch, h);
        for (b, &l) in lengths.iter().enumerate() {
            if t < l {
                keep.data_mut()[b * h..(b + 1) * h].fill(1.0);
            }
        }
        let drop = keep.map(|v| 1.0 - v);
        let keep = tape.constant(keep);
        let drop = tape.constant(drop);
        state = LstmState {
            h: blend(tape, keep, drop, next.h, state.h),
            c: blend(tape, keep, drop, next.c, state.c),
        };
    }
    state.h
}

/// `G = f(B(x))` from per-step inputs: concatenated final hidden states of the
/// two directions, then two tanh layers.
pub fn generator_from_inputs(tape: &mut Tape, bound: &Bound, inputs: &[Var], lengths: &[usize]) -> Var {
    let batch = lengths.len();
    let hidden = tape.value(bound.var("gen.fwd.wh")).rows();
    let encoded = if inputs.is_empty() {
        tape.constant(Tensor::zeros(batch, 2 * hidden))
    } else {
        let fwd = lstm_run(tape, bound, "gen.fwd", inputs, lengths, false);
        let bwd = lstm_run(tape, bound, "gen.bwd", inputs, lengths, true);
        tape.concat_cols(&[fwd, bwd])
    };
    let a = dense(tape, bound, "gen.fc1", encoded);
    let a = tape.tanh(a);
    let z = dense(tape, bound, "gen.fc2", a);
    tape.tanh(z)
}

/// Latents (`B×d`) of a batch of encoded functions, embedding included.
pub fn generator_batch(tape: &mut Tape, bound: &Bound, batch: &[&EncodedFunction]) -> Var {
    assert!(!batch.is_empty(), "empty generator batch");
    let lengths: Vec<usize> = batch.iter().map(|f| f.len()).collect();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    let w_si = bound.var("embedding.W_si");
    let inputs: Vec<Var> = (0..steps)
        .map(|t| {
            let rows: SparseRows =
                batch.iter().map(|f| f.statements.get(t).cloned().unwrap_or_default()).collect();
            tape.sparse_matmul(rows, w_si)
        })
        .collect();
    generator_from_inputs(tape, bound, &inputs, &lengths)
}

/// Latent vector of one pre-embedded function.
pub fn generator_forward(x: &SeqEmbedding, params: &Params) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind_prefix(&mut tape, "gen.", false);
    let inputs: Vec<Var> = (0..x.true_length.min(x.matrix.rows()))
        .map(|t| tape.constant(Tensor::row(x.matrix.row_slice(t).to_vec())))
        .collect();
    let z = generator_from_inputs(&mut tape, &bound, &inputs, &[inputs.len()]);
    tape.check()?;
    Ok(tape.value(z).data().to_vec())
}

/// Probability (`B×1`, clamped) that each latent row came from the source
/// domain.
pub fn discriminator(tape: &mut Tape, bound: &Bound, z: Var) -> Var {
    let a = dense(tape, bound, "disc.l1", z);
    let a = tape.tanh(a);
    let a = dense(tape, bound, "disc.l2", a);
    let a = tape.tanh(a);
    let logit = dense(tape, bound, "disc.out", a);
    let p = tape.sigmoid(logit);
    tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
}

pub fn discriminator_forward(z: &[f64], params: &Params) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind_prefix(&mut tape, "disc.", false);
    let zv = tape.constant(Tensor::row(z.to_vec()));
    let p = discriminator(&mut tape, &bound, zv);
    tape.value(p).item()
}

/// `mean log D(source) + mean log(1 − D(target))` from discriminator outputs.
pub fn gan_objective(tape: &mut Tape, d_source: Var, d_target: Var) -> Var {
    let ls = tape.log(d_source);
    let ms = tape.mean(ls);
    let neg = tape.neg(d_target);
    let one_minus = tape.add_scalar(neg, 1.0);
    let lt = tape.log(one_minus);
    let mt = tape.mean(lt);
    tape.add(ms, mt)
}

/// Scalar form of [`gan_objective`] over already-computed probabilities.
pub fn gan_objective_value(source_probs: &[f64], target_probs: &[f64]) -> Result<f64> {
    if source_probs.is_empty() || target_probs.is_empty() {
        return Err(Error::Validation("adversarial objective needs both domains".into()));
    }
    let clamp = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let s = source_probs.iter().map(|&p| clamp(p).ln()).sum::<f64>() / source_probs.len() as f64;
    let t = target_probs.iter().map(|&p| (1.0 - clamp(p)).ln()).sum::<f64>() / target_probs.len() as f64;
    Ok(s + t)
}

/// Logit difference `l₁ − l₀` (`B×1`) of the classifier head.
pub fn head_score(tape: &mut Tape, bound: &Bound, z: Var) -> Var {
    let a = dense(tape, bound, "head.l1", z);
    let a = tape.tanh(a);
    let a = dense(tape, bound, "head.l2", a);
    let a = tape.tanh(a);
    let logits = dense(tape, bound, "head.out", a);
    let l0 = tape.slice_cols(logits, 0, 1);
    let l1 = tape.slice_cols(logits, 1, 2);
    tape.sub(l1, l0)
}

/// Two-class softmax cross-entropy, averaged over the batch. `labels` are 0/1.
pub fn head_loss(tape: &mut Tape, score: Var, labels: &[f64]) -> Var {
    let p = tape.sigmoid(score);
    let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let neg = tape.neg(p);
    let q = tape.add_scalar(neg, 1.0);
    let lp = tape.log(p);
    let lq = tape.log(q);
    let y = tape.constant(Tensor::column(labels.to_vec()));
    let not_y = tape.constant(Tensor::column(labels.iter().map(|y| 1.0 - y).collect()));
    let a = tape.mul(y, lp);
    let b = tape.mul(not_y, lq);
    let ll = tape.add(a, b);
    let m = tape.mean(ll);
    tape.neg(m)
}

/// Probability of the positive class from a logit difference.
pub fn head_probability(score: f64) -> f64 {
    sigmoid(score)
}
