//! Reverse-mode gradient tape over dense tensors.
//!
//! Every operation appends a node holding its forward value. A node is
//! *tracked* when at least one of its inputs is tracked (leaves created with
//! [`Tape::leaf`] are tracked, constants are not); [`Tape::backward`] walks
//! tracked nodes once, in reverse insertion order, so reductions happen in a
//! fixed order and gradients are bit-reproducible.

use std::borrow::Cow;
use std::rc::Rc;

use super::gemm::{gemm, MatRef};
use super::sparse::SparseMatrix;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    AddN { parts: Vec<Var> },
    AddBias { a: Var, bias: Var },
    Scale { a: Var, c: f64 },
    Mul { a: Var, b: Var },
    Contract { h: Var, w: Var },
    BatchMatMulNT { t: Var, g: Var },
    PairAffine { s: Var, uq: Var, ug: Var, bias: Var },
    Concat { parts: Vec<Var> },
    ChannelMix { x: Var, w: Var, bias: Var },
    RowSoftmax { a: Var },
    Sigmoid { a: Var },
    Elu { a: Var },
    Frobenius { a: Var },
    Sum { a: Var },
    SliceRows { a: Var, start: usize },
    SliceMid { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Propagate { adj: Rc<SparseMatrix>, h: Var },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    tracked: bool,
}

/// Records a computation for one backward pass. Values may borrow from
/// long-lived parameter storage for the lifetime `'p`.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients of a scalar with respect to the tracked inputs of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn softmax_rows(data: &mut [f64], width: usize) {
    if width == 0 {
        return;
    }
    for row in data.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.push(Cow::Owned(value), op, tracked)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Input, true)
    }

    /// Differentiable input borrowed from outside storage.
    pub fn leaf_ref(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Input, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Input, false)
    }

    pub fn constant_ref(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Input, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// `op(a) * op(b)` where `op` optionally transposes a matrix.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (ar, ac) = x.dims2()?;
        let (br, bc) = y.dims2()?;
        let av = MatRef::new(x.data(), ar, ac).t_if(ta);
        let bv = MatRef::new(y.data(), br, bc).t_if(tb);
        if av.cols != bv.rows {
            return Err(mismatch("matmul", x, y));
        }
        let mut out = vec![0.0; av.rows * bv.cols];
        gemm(1.0, av, bv, 0.0, &mut out);
        let value = Tensor::from_vec(vec![av.rows, bv.cols], out)?;
        Ok(self.record(value, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(op, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        Tensor::from_vec(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |p, q| p + q)?;
        Ok(self.record(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("sub", a, b, |p, q| p - q)?;
        Ok(self.record(value, Op::Sub { a, b }, &[a, b]))
    }

    /// Sum of same-shaped tensors, accumulated left to right.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("add_n of an empty list"))?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            let x = self.value(p);
            if x.shape() != acc.shape() {
                return Err(mismatch("add_n", &acc, x));
            }
            acc.data_mut().iter_mut().zip(x.data()).for_each(|(d, s)| *d += s);
        }
        Ok(self.record(acc, Op::AddN { parts: parts.to_vec() }, parts))
    }

    /// Adds a length-`c` bias to every row of an `r x c` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let (_, c) = x.dims2()?;
        if b.len() != c {
            return Err(mismatch("add_bias", x, b));
        }
        let mut value = x.clone();
        for row in value.data_mut().chunks_mut(c) {
            row.iter_mut().zip(b.data()).for_each(|(d, s)| *d += s);
        }
        Ok(self.record(value, Op::AddBias { a, bias }, &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| c * x);
        Ok(self.record(value, Op::Scale { a, c }, &[a]))
    }

    /// Elementwise product; `b` may also be an `n x m` matrix broadcast over
    /// the leading axis of a `k x n x m` tensor `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let broadcast = x.rank() == 3 && y.rank() == 2 && x.shape()[1..] == *y.shape();
        if x.shape() != y.shape() && !broadcast {
            return Err(mismatch("mul", x, y));
        }
        let inner = y.len();
        let mut value = x.clone();
        if inner > 0 {
            for chunk in value.data_mut().chunks_mut(inner) {
                chunk.iter_mut().zip(y.data()).for_each(|(d, s)| *d *= s);
            }
        }
        Ok(self.record(value, Op::Mul { a, b }, &[a, b]))
    }

    /// `out[s] = h * w[s]` for `h: n x d` and `w: k x d x e`; result `k x n x e`.
    pub fn contract(&mut self, h: Var, w: Var) -> Result<Var> {
        let (x, y) = (self.value(h), self.value(w));
        let (n, d) = x.dims2()?;
        let (k, wd, e) = y.dims3()?;
        if wd != d {
            return Err(mismatch("contract", x, y));
        }
        let mut out = vec![0.0; k * n * e];
        for s in 0..k {
            let ws = &y.data()[s * d * e..(s + 1) * d * e];
            gemm(
                1.0,
                MatRef::new(x.data(), n, d),
                MatRef::new(ws, d, e),
                0.0,
                &mut out[s * n * e..(s + 1) * n * e],
            );
        }
        let value = Tensor::from_vec(vec![k, n, e], out)?;
        Ok(self.record(value, Op::Contract { h, w }, &[h, w]))
    }

    /// `out[s] = t[s] * g^T` for `t: k x n x d` and `g: m x d`; result `k x n x m`.
    pub fn batch_matmul_nt(&mut self, t: Var, g: Var) -> Result<Var> {
        let (x, y) = (self.value(t), self.value(g));
        let (k, n, d) = x.dims3()?;
        let (m, gd) = y.dims2()?;
        if gd != d {
            return Err(mismatch("batch_matmul_nt", x, y));
        }
        let mut out = vec![0.0; k * n * m];
        gemm(
            1.0,
            MatRef::new(x.data(), k * n, d),
            MatRef::new(y.data(), m, d).t(),
            0.0,
            &mut out,
        );
        let value = Tensor::from_vec(vec![k, n, m], out)?;
        Ok(self.record(value, Op::BatchMatMulNT { t, g }, &[t, g]))
    }

    /// `out[s,i,j] = s[s,i,j] + uq[i,s] + ug[j,s] + bias[s]`.
    pub fn pair_affine(&mut self, s: Var, uq: Var, ug: Var, bias: Var) -> Result<Var> {
        let x = self.value(s);
        let (k, n, m) = x.dims3()?;
        let (q, g, b) = (self.value(uq), self.value(ug), self.value(bias));
        if q.shape() != [n, k] {
            return Err(mismatch("pair_affine", x, q));
        }
        if g.shape() != [m, k] {
            return Err(mismatch("pair_affine", x, g));
        }
        if b.len() != k {
            return Err(mismatch("pair_affine", x, b));
        }
        let mut value = x.clone();
        let out = value.data_mut();
        for c in 0..k {
            for i in 0..n {
                let base = b.data()[c] + q.data()[i * k + c];
                let row = &mut out[(c * n + i) * m..(c * n + i + 1) * m];
                for (j, cell) in row.iter_mut().enumerate() {
                    *cell += base + g.data()[j * k + c];
                }
            }
        }
        Ok(self.record(value, Op::PairAffine { s, uq, ug, bias }, &[s, uq, ug, bias]))
    }

    /// Stacks `C_i x n x m` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of an empty list"))?;
        let (_, n, m) = self.value(first).dims3()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let x = self.value(p);
            let (c, pn, pm) = x.dims3()?;
            if (pn, pm) != (n, m) {
                return Err(mismatch("concat_channels", self.value(first), x));
            }
            channels += c;
            data.extend_from_slice(x.data());
        }
        let value = Tensor::from_vec(vec![channels, n, m], data)?;
        Ok(self.record(value, Op::Concat { parts: parts.to_vec() }, parts))
    }

    /// Per-cell linear map across channels: `out[i,j] = sum_c w[c] x[c,i,j] + bias`.
    pub fn channel_mix(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (t, wt, bt) = (self.value(x), self.value(w), self.value(bias));
        let (c, n, m) = t.dims3()?;
        if wt.len() != c {
            return Err(mismatch("channel_mix", t, wt));
        }
        if bt.len() != 1 {
            return Err(mismatch("channel_mix", t, bt));
        }
        let cell = n * m;
        let mut out = vec![bt.data()[0]; cell];
        for ch in 0..c {
            let wc = wt.data()[ch];
            out.iter_mut()
                .zip(&t.data()[ch * cell..(ch + 1) * cell])
                .for_each(|(o, v)| *o += wc * v);
        }
        let value = Tensor::from_vec(vec![n, m], out)?;
        Ok(self.record(value, Op::ChannelMix { x, w, bias }, &[x, w, bias]))
    }

    /// Softmax along the last axis.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let width = *x
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("row_softmax of a scalar"))?;
        let mut value = x.clone();
        softmax_rows(value.data_mut(), width);
        Ok(self.record(value, Op::RowSoftmax { a }, &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        Ok(self.record(value, Op::Sigmoid { a }, &[a]))
    }

    /// Exponential linear unit with `alpha = 1`.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(elu);
        Ok(self.record(value, Op::Elu { a }, &[a]))
    }

    /// Frobenius norm; its gradient at the zero tensor is taken as zero.
    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var> {
        let norm = self.value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(self.record(Tensor::scalar(norm), Op::Frobenius { a }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        Ok(self.record(Tensor::scalar(total), Op::Sum { a }, &[a]))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        if start + len > r {
            return Err(Error::invalid(format!("row slice {start}+{len} of {r} rows")));
        }
        let data = x.data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::from_vec(vec![len, c], data)?;
        Ok(self.record(value, Op::SliceRows { a, start }, &[a]))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        if start + len > c {
            return Err(Error::invalid(format!("column slice {start}+{len} of {c} columns")));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in x.data().chunks(c.max(1)).take(r) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::from_vec(vec![r, len], data)?;
        Ok(self.record(value, Op::SliceCols { a, start }, &[a]))
    }

    /// Slice `start..start+len` along the middle axis of a rank-3 tensor.
    pub fn slice_mid(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let (k, n, d) = x.dims3()?;
        if start + len > n {
            return Err(Error::invalid(format!("slice {start}+{len} of axis length {n}")));
        }
        let mut data = Vec::with_capacity(k * len * d);
        for s in 0..k {
            data.extend_from_slice(&x.data()[(s * n + start) * d..(s * n + start + len) * d]);
        }
        let value = Tensor::from_vec(vec![k, len, d], data)?;
        Ok(self.record(value, Op::SliceMid { a, start }, &[a]))
    }

    /// `adj * h` for a constant sparse operator.
    pub fn propagate(&mut self, adj: Rc<SparseMatrix>, h: Var) -> Result<Var> {
        let x = self.value(h);
        let (r, c) = x.dims2()?;
        if adj.cols() != r {
            return Err(Error::ShapeMismatch {
                op: "propagate",
                left: vec![adj.rows(), adj.cols()],
                right: x.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; adj.rows() * c];
        adj.mul_dense_acc(x.data(), c, &mut out);
        let value = Tensor::from_vec(vec![adj.rows(), c], out)?;
        Ok(self.record(value, Op::Propagate { adj, h }, &[h]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.rank() > 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.nodes[loss.0].tracked {
            return Err(Error::invalid("loss does not depend on any tracked input"));
        }
        let count = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; count];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..count).rev() {
            let node = &self.nodes[idx];
            if !node.tracked || matches!(node.op, Op::Input) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(&node.op, &node.value, &g, &mut grads)?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (i, n) in self.nodes.iter().enumerate().take(count) {
            if !matches!(n.op, Op::Input) || !n.tracked {
                grads[i] = None;
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        slot.as_mut().map(Tensor::data_mut)
    }

    fn backprop(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Input => {}
            Op::MatMul { a, b, ta, tb } => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (ar, ac) = x.dims2()?;
                let (br, bc) = y.dims2()?;
                let av = MatRef::new(x.data(), ar, ac).t_if(*ta);
                let bv = MatRef::new(y.data(), br, bc).t_if(*tb);
                let gv = MatRef::new(gd, av.rows, bv.cols);
                if let Some(da) = self.acc(grads, *a) {
                    if *ta {
                        gemm(1.0, bv, gv.t(), 1.0, da);
                    } else {
                        gemm(1.0, gv, bv.t(), 1.0, da);
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    if *tb {
                        gemm(1.0, gv.t(), av, 1.0, db);
                    } else {
                        gemm(1.0, av.t(), gv, 1.0, db);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(gd).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(d, s)| *d += s);
                }
                if let Some(d) = self.acc(grads, *b) {
                    d.iter_mut().zip(gd).for_each(|(d, s)| *d -= s);
                }
            }
            Op::AddN { parts } => {
                for &v in parts {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(gd).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::AddBias { a, bias } => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(d, s)| *d += s);
                }
                let c = self.value(*bias).len();
                if let Some(db) = self.acc(grads, *bias) {
                    if c > 0 {
                        for row in gd.chunks(c) {
                            db.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(d, s)| *d += c * s);
                }
            }
            Op::Mul { a, b } => {
                let (x, y) = (self.value(*a), self.value(*b));
                let inner = y.len();
                if inner == 0 {
                    return Ok(());
                }
                if let Some(da) = self.acc(grads, *a) {
                    for (dchunk, gchunk) in da.chunks_mut(inner).zip(gd.chunks(inner)) {
                        for ((d, gv), yv) in dchunk.iter_mut().zip(gchunk).zip(y.data()) {
                            *d += gv * yv;
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for (gchunk, xchunk) in gd.chunks(inner).zip(x.data().chunks(inner)) {
                        for ((d, gv), xv) in db.iter_mut().zip(gchunk).zip(xchunk) {
                            *d += gv * xv;
                        }
                    }
                }
            }
            Op::Contract { h, w } => {
                let (x, y) = (self.value(*h), self.value(*w));
                let (n, d) = x.dims2()?;
                let (k, _, e) = y.dims3()?;
                if let Some(dh) = self.acc(grads, *h) {
                    for s in 0..k {
                        let ws = &y.data()[s * d * e..(s + 1) * d * e];
                        let gs = &gd[s * n * e..(s + 1) * n * e];
                        gemm(1.0, MatRef::new(gs, n, e), MatRef::new(ws, d, e).t(), 1.0, dh);
                    }
                }
                if let Some(dw) = self.acc(grads, *w) {
                    for s in 0..k {
                        let gs = &gd[s * n * e..(s + 1) * n * e];
                        gemm(
                            1.0,
                            MatRef::new(x.data(), n, d).t(),
                            MatRef::new(gs, n, e),
                            1.0,
                            &mut dw[s * d * e..(s + 1) * d * e],
                        );
                    }
                }
            }
            Op::BatchMatMulNT { t, g: gvar } => {
                let (x, y) = (self.value(*t), self.value(*gvar));
                let (k, n, d) = x.dims3()?;
                let (m, _) = y.dims2()?;
                let gv = MatRef::new(gd, k * n, m);
                if let Some(dt) = self.acc(grads, *t) {
                    gemm(1.0, gv, MatRef::new(y.data(), m, d), 1.0, dt);
                }
                if let Some(dg) = self.acc(grads, *gvar) {
                    gemm(1.0, gv.t(), MatRef::new(x.data(), k * n, d), 1.0, dg);
                }
            }
            Op::PairAffine { s, uq, ug, bias } => {
                let (k, n, m) = out.dims3()?;
                if let Some(d) = self.acc(grads, *s) {
                    d.iter_mut().zip(gd).for_each(|(d, s)| *d += s);
                }
                if let Some(d) = self.acc(grads, *uq) {
                    for c in 0..k {
                        for i in 0..n {
                            d[i * k + c] += gd[(c * n + i) * m..(c * n + i + 1) * m].iter().sum::<f64>();
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *ug) {
                    for c in 0..k {
                        for i in 0..n {
                            let row = &gd[(c * n + i) * m..(c * n + i + 1) * m];
                            for (j, v) in row.iter().enumerate() {
                                d[j * k + c] += v;
                            }
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *bias) {
                    for c in 0..k {
                        d[c] += gd[c * n * m..(c + 1) * n * m].iter().sum::<f64>();
                    }
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(d) = self.acc(grads, p) {
                        d.iter_mut()
                            .zip(&gd[offset..offset + len])
                            .for_each(|(d, s)| *d += s);
                    }
                    offset += len;
                }
            }
            Op::ChannelMix { x, w, bias } => {
                let (t, wt) = (self.value(*x), self.value(*w));
                let cell = gd.len();
                if let Some(dx) = self.acc(grads, *x) {
                    for (ch, wc) in wt.data().iter().enumerate() {
                        dx[ch * cell..(ch + 1) * cell]
                            .iter_mut()
                            .zip(gd)
                            .for_each(|(d, s)| *d += wc * s);
                    }
                }
                if let Some(dw) = self.acc(grads, *w) {
                    for (ch, d) in dw.iter_mut().enumerate() {
                        *d += t.data()[ch * cell..(ch + 1) * cell]
                            .iter()
                            .zip(gd)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                if let Some(db) = self.acc(grads, *bias) {
                    db[0] += gd.iter().sum::<f64>();
                }
            }
            Op::RowSoftmax { a } => {
                let width = *out.shape().last().expect("rank >= 1");
                if let Some(d) = self.acc(grads, *a) {
                    if width > 0 {
                        for ((drow, yrow), grow) in d
                            .chunks_mut(width)
                            .zip(out.data().chunks(width))
                            .zip(gd.chunks(width))
                        {
                            let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                            for ((dv, y), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                                *dv += y * (gv - dot);
                            }
                        }
                    }
                }
            }
            Op::Sigmoid { a } => {
                if let Some(d) = self.acc(grads, *a) {
                    for ((dv, y), gv) in d.iter_mut().zip(out.data()).zip(gd) {
                        *dv += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Elu { a } => {
                let x = self.value(*a);
                if let Some(d) = self.acc(grads, *a) {
                    for (((dv, xv), y), gv) in d.iter_mut().zip(x.data()).zip(out.data()).zip(gd) {
                        *dv += if *xv > 0.0 { *gv } else { gv * (y + 1.0) };
                    }
                }
            }
            Op::Frobenius { a } => {
                let norm = out.item();
                let x = self.value(*a);
                if let Some(d) = self.acc(grads, *a) {
                    if norm > 0.0 {
                        let c = gd[0] / norm;
                        d.iter_mut().zip(x.data()).for_each(|(d, v)| *d += c * v);
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::SliceRows { a, start } => {
                let (_, c) = out.dims2()?;
                if let Some(d) = self.acc(grads, *a) {
                    d[start * c..start * c + gd.len()]
                        .iter_mut()
                        .zip(gd)
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::SliceCols { a, start } => {
                let (r, len) = out.dims2()?;
                let c = self.value(*a).shape()[1];
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..r {
                        d[i * c + start..i * c + start + len]
                            .iter_mut()
                            .zip(&gd[i * len..(i + 1) * len])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::SliceMid { a, start } => {
                let (k, len, d) = out.dims3()?;
                let n = self.value(*a).shape()[1];
                if let Some(da) = self.acc(grads, *a) {
                    for s in 0..k {
                        da[(s * n + start) * d..(s * n + start + len) * d]
                            .iter_mut()
                            .zip(&gd[s * len * d..(s + 1) * len * d])
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Propagate { adj, h } => {
                let (_, c) = out.dims2()?;
                if let Some(d) = self.acc(grads, *h) {
                    adj.mul_t_dense_acc(gd, c, d);
                }
            }
        }
        Ok(())
    }
}
