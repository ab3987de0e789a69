//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Every operation
//! appends a node holding its value and the ids of its inputs; nodes are
//! therefore already in topological order and [`Graph::backward`] simply
//! walks them in reverse, accumulating adjoints.
//!
//! Values are 2-d `[rows, cols]` matrices, 1-d bias vectors, or one-element
//! scalars. Shape mismatches inside the graph are programming errors and
//! panic; user-facing entry points validate their inputs first.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{sigmoid, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `[m, n] + [n]`, bias broadcast over rows.
    AddRow(Var, Var),
    /// `[m, n] * [m, 1]`, per-row scale.
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// `max(a, floor)` elementwise.
    ClampMin(Var, f64),
    MatMul(Var, Var),
    /// `A Bᵀ`.
    MatMulBt(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    /// Row `r` from the first input when `mask[r]`, else from the second.
    SelectRows(Vec<bool>, Var, Var),
    Cols(Var, usize),
    Rows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    PickPerRow(Var, Vec<usize>),
    RowSumSq(Var),
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
    SumSq(Var, bool),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("kernel output shape")
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// `C[m,n] = A[m,k] B[k,n]`.
fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `C[m,n] = A[m,k] B[n,k]ᵀ`.
fn matmul_bt_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `C[k,n] += A[m,k]ᵀ B[m,n]`.
fn matmul_at_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter as a leaf. Binding the same id twice returns the
    /// same node, so reuse across several forward passes shares one adjoint.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        self.bound.insert(id, v);
        v
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[a.0].value;
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "elementwise operands differ in shape");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    /// `max(a, floor)`; the gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let (m, n) = dims(ta);
        assert_eq!(tb.len(), n, "bias width");
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        self.push(mat(m, n, data), Op::AddRow(a, bias))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (ta, tc) = (&self.nodes[a.0].value, &self.nodes[col.0].value);
        let (m, n) = dims(ta);
        assert_eq!(tc.len(), m, "column scale length");
        let mut data = ta.data().to_vec();
        for (row, c) in data.chunks_mut(n).zip(tc.data()) {
            row.iter_mut().for_each(|x| *x *= c);
        }
        self.push(mat(m, n, data), Op::MulCol(a, col))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = dims(ta);
        let (k2, n) = if tb.shape().len() == 1 { (tb.len(), 1) } else { dims(tb) };
        assert_eq!(k, k2, "matmul inner dimension");
        let data = matmul_kernel(ta.data(), tb.data(), m, k, n);
        self.push(mat(m, n, data), Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = dims(ta);
        let (n, k2) = dims(tb);
        assert_eq!(k, k2, "matmul_bt inner dimension");
        let data = matmul_bt_kernel(ta.data(), tb.data(), m, k, n);
        self.push(mat(m, n, data), Op::MatMulBt(a, b))
    }

    pub fn select_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Var {
        let (ta, tb) = (&self.nodes[on.0].value, &self.nodes[off.0].value);
        assert_eq!(ta.shape(), tb.shape(), "select_rows operands");
        let (m, n) = dims(ta);
        assert_eq!(mask.len(), m, "select_rows mask length");
        let mut data = Vec::with_capacity(m * n);
        for (r, &keep) in mask.iter().enumerate() {
            data.extend_from_slice(if keep { ta.row(r) } else { tb.row(r) });
        }
        self.push(mat(m, n, data), Op::SelectRows(mask.to_vec(), on, off))
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims(ta);
        assert!(start + len <= n, "column slice out of range");
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        self.push(mat(m, len, data), Op::Cols(a, start))
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims(ta);
        assert!(start + len <= m, "row slice out of range");
        let data = ta.data()[start * n..(start + len) * n].to_vec();
        self.push(mat(len, n, data), Op::Rows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.nodes[parts[0].0].value.rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let t = &self.nodes[p.0].value;
                assert_eq!(t.rows(), m, "concat_cols row count");
                t.cols()
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        self.push(mat(m, n, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.nodes[parts[0].0].value.cols();
        let mut data = Vec::new();
        let mut m = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.cols(), n, "concat_rows column count");
            m += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(mat(m, n, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims(ta);
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                data[c * m + r] = ta.data()[r * n + c];
            }
        }
        self.push(mat(n, m, data), Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.nodes[a.0].value.clone().reshape(vec![rows, cols]);
        self.push(t.expect("reshape size"), Op::Reshape(a))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let (v, e) = dims(t);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            assert!(id < v, "gather index {id} out of range {v}");
            data.extend_from_slice(t.row(id));
        }
        self.push(mat(ids.len(), e, data), Op::Gather(table, ids.to_vec()))
    }

    /// Row-wise softmax. Masked entries (−∞ scores) come out exactly 0.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims(ta);
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row_mask = mask.map(|mk| &mk[r * n..(r + 1) * n]);
            data.extend(crate::tensor::softmax(ta.row(r), row_mask)?);
        }
        Ok(self.push(mat(m, n, data), Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims(ta);
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = ta.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        self.push(mat(m, n, data), Op::LogSoftmaxRows(a))
    }

    /// `out[i] = a[i, idx[i]]` as an `[m, 1]` column.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Var {
        let ta = &self.nodes[a.0].value;
        let (m, n) = dims(ta);
        assert_eq!(idx.len(), m, "one index per row");
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < n, "pick index out of range");
                ta.data()[r * n + c]
            })
            .collect();
        self.push(mat(m, 1, data), Op::PickPerRow(a, idx.to_vec()))
    }

    pub fn row_sum_sq(&mut self, a: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let (m, _) = dims(ta);
        let data = (0..m).map(|r| ta.row(r).iter().map(|x| x * x).sum()).collect();
        self.push(mat(m, 1, data), Op::RowSumSq(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `Σ wᵢ aᵢ` over the flattened values of `a`.
    pub fn weighted_sum(&mut self, a: Var, weights: &[f64]) -> Var {
        let ta = &self.nodes[a.0].value;
        assert_eq!(ta.len(), weights.len(), "one weight per element");
        let s = ta.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum(a, weights.to_vec()))
    }

    /// Sum of squares, optionally skipping the first row.
    pub fn sum_sq(&mut self, a: Var, skip_first_row: bool) -> Var {
        let ta = &self.nodes[a.0].value;
        let start = if skip_first_row { ta.cols() } else { 0 };
        let s = ta.data()[start..].iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SumSq(a, skip_first_row))
    }

    /// Adjoint of every node with respect to the scalar `root`.
    pub fn gradients(&self, root: Var) -> Result<Vec<Option<Tensor>>> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Fills `store`'s gradients with ∂root/∂param for every bound parameter,
    /// adding to whatever is already there.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(root)?;
        for (i, node) in self.nodes.iter().enumerate().take(grads.len()) {
            let (Some(id), Some(g)) = (node.param, &grads[i]) else {
                continue;
            };
            let p = store.get_mut(id);
            let range = p.trainable_range();
            let dst = &mut p.grad.data_mut()[range.clone()];
            for (d, s) in dst.iter_mut().zip(&g.data()[range]) {
                *d += s;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[i].value;
        let gd = g.data();

        let mut acc = |v: Var, delta: Vec<f64>| {
            let shape = val(v).shape();
            match &mut grads[v.0] {
                Some(t) => {
                    for (x, d) in t.data_mut().iter_mut().zip(&delta) {
                        *x += d;
                    }
                }
                slot @ None => {
                    *slot = Some(Tensor::new(shape.to_vec(), delta).expect("adjoint shape"));
                }
            }
        };
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..gd.len()).map(f).collect() };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, elementwise(&|k| gd[k] * bd[k]));
                acc(*b, elementwise(&|k| gd[k] * ad[k]));
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, elementwise(&|k| gd[k] / bd[k]));
                acc(*b, elementwise(&|k| -gd[k] * ad[k] / (bd[k] * bd[k])));
            }
            Op::AddRow(a, bias) => {
                let n = out.cols();
                let mut db = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*a, gd.to_vec());
                acc(*bias, db);
            }
            Op::MulCol(a, col) => {
                let n = out.cols();
                let (ad, cd) = (val(*a).data(), val(*col).data());
                let da = elementwise(&|k| gd[k] * cd[k / n]);
                let dc = gd
                    .chunks(n)
                    .zip(ad.chunks(n))
                    .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                    .collect();
                acc(*a, da);
                acc(*col, dc);
            }
            Op::Scale(a, k) => acc(*a, gd.iter().map(|x| x * k).collect()),
            Op::AddScalar(a) => acc(*a, gd.to_vec()),
            Op::ClampMin(a, floor) => {
                let x = val(*a).data();
                acc(*a, elementwise(&|k| if x[k] > *floor { gd[k] } else { 0.0 }));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = dims(ta);
                let n = out.cols();
                // dA = G Bᵀ, dB = Aᵀ G
                acc(*a, matmul_bt_kernel(gd, tb.data(), m, n, k));
                let mut db = vec![0.0; k * n];
                matmul_at_acc(&mut db, ta.data(), gd, m, k, n);
                acc(*b, db);
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = dims(ta);
                let n = tb.rows();
                // dA = G B, dB = Gᵀ A
                acc(*a, matmul_kernel(gd, tb.data(), m, n, k));
                let mut db = vec![0.0; n * k];
                matmul_at_acc(&mut db, gd, ta.data(), m, n, k);
                acc(*b, db);
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, elementwise(&|k| gd[k] * y[k] * (1.0 - y[k])));
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc(*a, elementwise(&|k| gd[k] * (1.0 - y[k] * y[k])));
            }
            Op::Exp(a) => {
                let y = out.data();
                acc(*a, elementwise(&|k| gd[k] * y[k]));
            }
            Op::Ln(a) => {
                let x = val(*a).data();
                acc(*a, elementwise(&|k| gd[k] / x[k]));
            }
            Op::Sqrt(a) => {
                let y = out.data();
                acc(*a, elementwise(&|k| gd[k] / (2.0 * y[k])));
            }
            Op::SelectRows(mask, on, off) => {
                let n = out.cols();
                let mut don = vec![0.0; gd.len()];
                let mut doff = vec![0.0; gd.len()];
                for (r, &keep) in mask.iter().enumerate() {
                    let dst = if keep { &mut don } else { &mut doff };
                    dst[r * n..(r + 1) * n].copy_from_slice(&gd[r * n..(r + 1) * n]);
                }
                acc(*on, don);
                acc(*off, doff);
            }
            Op::Cols(a, start) => {
                let (m, n) = dims(val(*a));
                let w = out.cols();
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    da[r * n + start..r * n + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                acc(*a, da);
            }
            Op::Rows(a, start) => {
                let n = out.cols();
                let mut da = vec![0.0; val(*a).len()];
                da[start * n..start * n + gd.len()].copy_from_slice(gd);
                acc(*a, da);
            }
            Op::ConcatCols(parts) => {
                let m = out.rows();
                let n = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    let mut dp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        dp.extend_from_slice(&gd[r * n + offset..r * n + offset + w]);
                    }
                    acc(*p, dp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, gd[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Transpose(a) => {
                let (m, n) = dims(val(*a));
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        da[r * n + c] = gd[c * m + r];
                    }
                }
                acc(*a, da);
            }
            Op::Reshape(a) => acc(*a, gd.to_vec()),
            Op::Gather(table, ids) => {
                let (v, e) = dims(val(*table));
                let mut dt = vec![0.0; v * e];
                for (i, &id) in ids.iter().enumerate() {
                    for c in 0..e {
                        dt[id * e + c] += gd[i * e + c];
                    }
                }
                acc(*table, dt);
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                let y = out.data();
                let mut da = vec![0.0; gd.len()];
                for (r, (gr, yr)) in gd.chunks(n).zip(y.chunks(n)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, z)| x * z).sum();
                    for c in 0..n {
                        da[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let n = out.cols();
                let y = out.data();
                let mut da = vec![0.0; gd.len()];
                for (r, (gr, yr)) in gd.chunks(n).zip(y.chunks(n)).enumerate() {
                    let total: f64 = gr.iter().sum();
                    for c in 0..n {
                        da[r * n + c] = gr[c] - yr[c].exp() * total;
                    }
                }
                acc(*a, da);
            }
            Op::PickPerRow(a, idx) => {
                let n = val(*a).cols();
                let mut da = vec![0.0; val(*a).len()];
                for (r, &c) in idx.iter().enumerate() {
                    da[r * n + c] = gd[r];
                }
                acc(*a, da);
            }
            Op::RowSumSq(a) => {
                let ta = val(*a);
                let n = ta.cols();
                let ad = ta.data();
                acc(*a, (0..ad.len()).map(|k| 2.0 * ad[k] * gd[k / n]).collect());
            }
            Op::Sum(a) => acc(*a, vec![gd[0]; val(*a).len()]),
            Op::WeightedSum(a, w) => acc(*a, w.iter().map(|x| x * gd[0]).collect()),
            Op::SumSq(a, skip) => {
                let ta = val(*a);
                let start = if *skip { ta.cols() } else { 0 };
                let da = ta
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, x)| if k < start { 0.0 } else { 2.0 * x * gd[0] })
                    .collect();
                acc(*a, da);
            }
        }
    }
}
