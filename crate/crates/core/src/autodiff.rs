//! A small reverse-mode differentiation tape over dense matrices.
//!
//! Parameters live in a [`ParamStore`]; a [`Tape`] borrows the store, records every
//! operation applied to [`Var`] handles, and [`Tape::backward`] replays the record in
//! reverse to produce gradients for each parameter that took part in the loss.

use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{math, Error, Matrix, Result};

pub type ParamId = usize;

/// Named dense parameter arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (i, n.as_str(), v))
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        if value.shape() != self.values[id].shape() {
            return Err(Error::DimensionMismatch {
                context: "parameter assignment",
                expected: self.values[id].shape(),
                found: value.shape(),
            });
        }
        self.values[id] = value;
        Ok(())
    }
}

/// Row-sparse constant matrix: row `i` holds `(column, weight)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows.len(), self.cols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] += w;
            }
        }
        m
    }

    pub fn matmul(&self, x: &Matrix) -> Matrix {
        assert_eq!(self.cols, x.rows(), "sparse matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows.len(), x.cols());
        for (i, row) in self.rows.iter().enumerate() {
            let out_row = out.row_mut(i);
            for &(j, w) in row {
                for (o, v) in out_row.iter_mut().zip(x.row(j)) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// `selfᵀ · g`.
    pub fn t_matmul(&self, g: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.cols, g.cols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                let gi = g.row(i).to_vec();
                for (o, v) in out.row_mut(j).iter_mut().zip(gi) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Constant,
    GatherRows(Var, Vec<usize>),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    SparseMatMul(Rc<SparseRows>, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    Sum(Var),
    BceWithLogits(Var, Vec<f64>),
    CrossEntropy(Var, Vec<f64>),
}

/// Records operations for one forward pass.
pub struct Tape<'a> {
    store: &'a ParamStore,
    ops: Vec<Op>,
    values: Vec<Matrix>,
}

/// Gradients keyed by parameter id. Parameters that did not influence the loss are absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape { store, ops: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match self.ops[v.0] {
            Op::Param(id) => self.store.get(id),
            _ => &self.values[v.0],
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Matrix::empty())
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let value = self.value(x).gather_rows(indices);
        self.push(Op::GatherRows(x, indices.to_vec()), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!((1, av.cols()), bv.shape(), "bias must be a 1 x n row");
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, bias), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scaled(k);
        self.push(Op::Scale(a, k), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push(Op::MatMulT(a, b), value)
    }

    pub fn sparse_matmul(&mut self, s: &Rc<SparseRows>, x: Var) -> Var {
        let value = s.matmul(self.value(x));
        self.push(Op::SparseMatMul(Rc::clone(s), x), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for i in 0..av.rows() {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let value = Matrix::from_vec(av.rows(), av.cols() + bv.cols(), data);
        self.push(Op::ConcatCols(a, b), value)
    }

    /// Vertically stacks matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows needs at least one part");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "stack_rows column mismatch");
            data.extend_from_slice(v.as_slice());
            rows += v.rows();
        }
        self.push(Op::StackRows(parts.to_vec()), Matrix::from_vec(rows, cols, data))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len(), "one target per logit");
        let n = targets.len().max(1) as f64;
        let loss: f64 = z.as_slice().iter().zip(targets).map(|(&z, &y)| math::softplus(z) - y * z).sum::<f64>() / n;
        self.push(Op::BceWithLogits(logits, targets.to_vec()), Matrix::scalar(loss))
    }

    /// Mean binary cross-entropy of probabilities `p` against targets.
    pub fn cross_entropy(&mut self, p: Var, targets: &[f64]) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.len(), targets.len(), "one target per probability");
        let n = targets.len().max(1) as f64;
        let loss: f64 = pv
            .as_slice()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| -(y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p)))
            .sum::<f64>()
            / n;
        self.push(Op::CrossEntropy(p, targets.to_vec()), Matrix::scalar(loss))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::DimensionMismatch { context: "backward", expected: (1, 1), found: lv.shape() });
        }
        if !lv[(0, 0)].is_finite() {
            return Err(Error::NonFinite { context: String::from("loss") });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let value = &self.values[idx];
            match &self.ops[idx] {
                Op::Param(id) => {
                    match out.grads.get_mut(id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            out.grads.insert(*id, g);
                        }
                    }
                }
                Op::Constant => {}
                Op::GatherRows(x, indices) => {
                    // scatter straight into the source slot; gathers from large tables are frequent
                    let (rows, cols) = self.value(*x).shape();
                    let gx = grads[x.0].get_or_insert_with(|| Matrix::zeros(rows, cols));
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gb.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scaled(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |g, y| g * y);
                    let gb = g.zip_map(self.value(*a), |g, x| g * x);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.scaled(*k)),
                Op::MatMul(a, b) => {
                    // C = A B: dA = G Bᵀ, dB = Aᵀ G
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // C = A Bᵀ: dA = G B, dB = Gᵀ A
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SparseMatMul(s, x) => accumulate(&mut grads, *x, s.t_matmul(&g)),
                Op::Sigmoid(a) => accumulate(&mut grads, *a, g.zip_map(value, |g, s| g * s * (1.0 - s))),
                Op::Tanh(a) => accumulate(&mut grads, *a, g.zip_map(value, |g, t| g * (1.0 - t * t))),
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let s = value.row(i);
                        let gi = g.row(i);
                        let dot: f64 = s.iter().zip(gi).map(|(s, g)| s * g).sum();
                        for ((o, &sj), &gj) in ga.row_mut(i).iter_mut().zip(s).zip(gi) {
                            *o = sj * (gj - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let mut ga = Matrix::zeros(g.rows(), ca);
                    let mut gb = Matrix::zeros(g.rows(), cb);
                    for i in 0..g.rows() {
                        ga.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                        gb.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let slice = g.as_slice()[offset * c..(offset + r) * c].to_vec();
                        accumulate(&mut grads, p, Matrix::from_vec(r, c, slice));
                        offset += r;
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::BceWithLogits(z, targets) => {
                    let zv = self.value(*z);
                    let n = targets.len().max(1) as f64;
                    let scale = g[(0, 0)] / n;
                    let data = zv.as_slice().iter().zip(targets).map(|(&z, &y)| scale * (math::sigmoid(z) - y)).collect();
                    accumulate(&mut grads, *z, Matrix::from_vec(zv.rows(), zv.cols(), data));
                }
                Op::CrossEntropy(p, targets) => {
                    let pv = self.value(*p);
                    let n = targets.len().max(1) as f64;
                    let scale = g[(0, 0)] / n;
                    let data = pv
                        .as_slice()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &y)| scale * (-(y / p) + (1.0 - y) / (1.0 - p)))
                        .collect();
                    accumulate(&mut grads, *p, Matrix::from_vec(pv.rows(), pv.cols(), data));
                }
            }
        }
        for (&id, g) in &out.grads {
            if !g.all_finite() {
                return Err(Error::NonFinite { context: format!("gradient of {}", self.store.name(id)) });
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = math::exp(*x - max);
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}
