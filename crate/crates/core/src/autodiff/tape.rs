use std::collections::BTreeMap;

use super::tensor::{gemm, Operand, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse rows multiplied into a dense matrix. Row `b` of the result
/// is `Σ count · W[index]` over the entries of `rows[b]`.
pub type SparseRows = Vec<Vec<(usize, f64)>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Cos(Var),
    Sin(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SparseMatMul(SparseRows, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Cos(_) => "cos",
            Op::Sin(_) => "sin",
            Op::Relu(_) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::ConcatCols(_) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SparseMatMul(..) => "sparse_matmul",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Nodes are appended in evaluation order, which is already a
/// topological order.
///
/// Shape errors are programming errors and panic. Non-finite values are data
/// errors: the first one is remembered and surfaced by [`Tape::check`] and
/// [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(usize, &'static str)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Returns the first numeric fault seen during the forward pass.
    pub fn check(&self) -> Result<()> {
        match self.fault {
            Some((node, op)) => Err(Error::Numeric { op, node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some((id, op.name()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(id)
    }

    fn grad_flag(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.grad_flag(&[a]);
        self.push(value, op, rg)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "{} operands differ in shape", op.name());
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data).expect("shape checked");
        let rg = self.grad_flag(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b)).expect("matmul shapes");
        let rg = self.grad_flag(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |p, q| p + q)
    }

    /// `a + b` where `b` is a `1×cols` row (broadcast over rows) or `1×1`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(y.rows(), 1, "broadcast operand must be a row");
        let mut out = x.clone();
        if y.cols() == 1 {
            let s = y.item();
            out.data_mut().iter_mut().for_each(|v| *v += s);
        } else {
            assert_eq!(y.cols(), x.cols(), "broadcast width");
            let cols = x.cols();
            for row in out.data_mut().chunks_mut(cols) {
                row.iter_mut().zip(y.data()).for_each(|(v, b)| *v += b);
            }
        }
        let rg = self.grad_flag(&[a, b]);
        self.push(out, Op::AddBroadcast(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |v| v * k)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |v| v + k)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    /// `max(0, a)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.grad_flag(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        let rg = self.grad_flag(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat row count");
                data.extend_from_slice(t.row_slice(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data).expect("concat shape");
        let rg = self.grad_flag(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start < end && end <= x.cols(), "slice_cols bounds");
        let mut data = Vec::with_capacity(x.rows() * (end - start));
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..end]);
        }
        let value = Tensor::from_vec(x.rows(), end - start, data).expect("slice shape");
        let rg = self.grad_flag(&[a]);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start < end && end <= x.rows(), "slice_rows bounds");
        let data = x.data()[start * x.cols()..end * x.cols()].to_vec();
        let value = Tensor::from_vec(end - start, x.cols(), data).expect("slice shape");
        let rg = self.grad_flag(&[a]);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    /// Dense product of constant sparse rows with `w`. Empty rows give zeros.
    pub fn sparse_matmul(&mut self, rows: SparseRows, w: Var) -> Var {
        let wt = self.value(w);
        let cols = wt.cols();
        let mut out = Tensor::zeros(rows.len().max(1), cols);
        for (b, entries) in rows.iter().enumerate() {
            for &(idx, count) in entries {
                let src = wt.row_slice(idx);
                let dst = &mut out.data_mut()[b * cols..(b + 1) * cols];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += count * s);
            }
        }
        let rg = self.grad_flag(&[w]);
        self.push(out, Op::SparseMatMul(rows, w), rg)
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check()?;
        assert_eq!(self.value(output).shape(), [1, 1], "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !g.is_finite() {
                return Err(Error::Numeric { op: node.op.name(), node: id });
            }
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let mut da = Tensor::zeros(val(*a).rows(), val(*a).cols());
                    gemm(Operand::plain(g), Operand::transposed(val(*b)), &mut da, 0.0);
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = Tensor::zeros(val(*b).rows(), val(*b).cols());
                    gemm(Operand::transposed(val(*a)), Operand::plain(g), &mut db, 0.0);
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                accumulate_if(grads, wants(*a), *a, || g.clone());
                accumulate_if(grads, wants(*b), *b, || g.clone());
            }
            Op::AddBroadcast(a, b) => {
                accumulate_if(grads, wants(*a), *a, || g.clone());
                if wants(*b) {
                    let width = val(*b).cols();
                    let mut db = Tensor::zeros(1, width);
                    if width == 1 {
                        db.data_mut()[0] = g.data().iter().sum();
                    } else {
                        for row in g.data().chunks(width) {
                            db.data_mut().iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Sub(a, b) => {
                accumulate_if(grads, wants(*a), *a, || g.clone());
                accumulate_if(grads, wants(*b), *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate_if(grads, wants(*a), *a, || hadamard(g, val(*b)));
                accumulate_if(grads, wants(*b), *b, || hadamard(g, val(*a)));
            }
            Op::Scale(a, k) => accumulate(grads, *a, g.map(|v| v * k)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Tanh(a) => accumulate(grads, *a, zip_with(g, y, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_with(g, y, |g, y| g * y * (1.0 - y))),
            Op::Exp(a) => accumulate(grads, *a, zip_with(g, y, |g, y| g * y)),
            Op::Log(a) => accumulate(grads, *a, zip_with(g, val(*a), |g, x| g / x)),
            Op::Cos(a) => accumulate(grads, *a, zip_with(g, val(*a), |g, x| -g * x.sin())),
            Op::Sin(a) => accumulate(grads, *a, zip_with(g, val(*a), |g, x| g * x.cos())),
            Op::Relu(a) => {
                accumulate(grads, *a, zip_with(g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))
            }
            Op::Clamp(a, lo, hi) => accumulate(
                grads,
                *a,
                zip_with(g, val(*a), |g, x| if x > *lo && x < *hi { g } else { 0.0 }),
            ),
            Op::Sum(a) => {
                let x = val(*a);
                accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), g.item()));
            }
            Op::Mean(a) => {
                let x = val(*a);
                accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), g.item() / x.len() as f64));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let mut dp = Vec::with_capacity(g.rows() * w);
                        for r in 0..g.rows() {
                            dp.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        accumulate(grads, p, Tensor::from_vec(g.rows(), w, dp).expect("concat grad"));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let mut da = Tensor::zeros(x.rows(), x.cols());
                let cols = x.cols();
                for r in 0..g.rows() {
                    da.data_mut()[r * cols + start..r * cols + start + g.cols()]
                        .copy_from_slice(g.row_slice(r));
                }
                accumulate(grads, *a, da);
            }
            Op::SliceRows(a, start) => {
                let x = val(*a);
                let mut da = Tensor::zeros(x.rows(), x.cols());
                let cols = x.cols();
                da.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(grads, *a, da);
            }
            Op::SparseMatMul(rows, w) => {
                let wt = val(*w);
                let cols = wt.cols();
                let mut dw = Tensor::zeros(wt.rows(), cols);
                for (b, entries) in rows.iter().enumerate() {
                    let gb = g.row_slice(b);
                    for &(idx, count) in entries {
                        let dst = &mut dw.data_mut()[idx * cols..(idx + 1) * cols];
                        dst.iter_mut().zip(gb).for_each(|(d, v)| *d += count * v);
                    }
                }
                accumulate(grads, *w, dw);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn accumulate_if(grads: &mut [Option<Tensor>], cond: bool, v: Var, delta: impl FnOnce() -> Tensor) {
    if cond {
        accumulate(grads, v, delta());
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_with(a, b, |x, y| x * y)
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for every bound parameter; unreached parameters get zeros.
    pub fn collect(&self, tape: &Tape, bound: &Bound) -> BTreeMap<String, Tensor> {
        bound
            .iter()
            .map(|(name, v)| {
                let g = self.get(v).cloned().unwrap_or_else(|| {
                    let t = tape.value(v);
                    Tensor::zeros(t.rows(), t.cols())
                });
                (name.to_owned(), g)
            })
            .collect()
    }
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn merge(&mut self, other: Params) {
        self.map.extend(other.map);
    }

    /// Puts the parameters whose names start with `prefix` on the tape.
    /// Matching parameters become leaves when `trainable`, constants otherwise.
    pub fn bind_prefix(&self, tape: &mut Tape, prefix: &str, trainable: bool) -> Bound {
        let mut vars = BTreeMap::new();
        for (name, t) in self.map.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let v = if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
            vars.insert(name.clone(), v);
        }
        Bound { vars }
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.bind_prefix(tape, "", true)
    }
}

/// Names of parameters placed on a tape, mapped to their nodes.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }

    /// Only the entries whose names start with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> Bound {
        Bound {
            vars: self
                .vars
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }
}
