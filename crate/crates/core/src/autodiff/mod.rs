//! Reverse-mode automatic differentiation over dense 2D arrays.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so node indices are already a topological order and
//! [`Tape::backward`] is a single reverse sweep.

mod tensor;

pub use tensor::Tensor;

use tensor::{dot, gemm_nn, gemm_nt, gemm_tn};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaxPoolRows {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    GroupScores {
        q: Var,
        k: Var,
        group: usize,
    },
    GroupMix {
        w: Var,
        v: Var,
        group: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-owner computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero if `v` is not on a path to the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input; receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va, vb));
        }
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        gemm_nn(va, vb, out.data_mut());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(shape_err("matmul_t", va, vb));
        }
        let mut out = Tensor::zeros(va.rows(), vb.rows());
        gemm_nt(va, vb, out.data_mut());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec_unchecked(va.rows(), va.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a `1 x d` row vector to every row of an `n x d` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(shape_err("add_row", vx, vb));
        }
        let d = vx.cols();
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(d.max(1)) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::Shift(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = vx.clone();
        let c = vx.cols().max(1);
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    /// Per-row `(x - mean) / sqrt(var + eps) * gamma + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.cols();
        if vg.shape() != (1, d) {
            return Err(shape_err("layer_norm", vx, vg));
        }
        if vb.shape() != (1, d) {
            return Err(shape_err("layer_norm", vx, vb));
        }
        if d < 2 {
            return Err(Error::Config("layer_norm needs at least 2 columns".into()));
        }
        let n = vx.rows();
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = vx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[i * d + j] = h;
                out[i * d + j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::from_vec_unchecked(n, d, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Column-wise maximum; ties resolve to the lowest row index.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rows() == 0 {
            return Err(Error::Empty("max_pool_rows"));
        }
        let d = vx.cols();
        let mut argmax = vec![0usize; d];
        let mut out = vx.row(0).to_vec();
        for i in 1..vx.rows() {
            for (j, &v) in vx.row(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec_unchecked(1, d, out), Op::MaxPoolRows { x, argmax }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let n = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != n {
                return Err(shape_err("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Tensor::from_vec_unchecked(n, total, out),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let vx = self.value(x);
        if start + width > vx.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vx.shape(),
                rhs: (start, width),
            });
        }
        let mut out = Vec::with_capacity(vx.rows() * width);
        for i in 0..vx.rows() {
            out.extend_from_slice(&vx.row(i)[start..start + width]);
        }
        let rows = vx.rows();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_vec_unchecked(rows, width, out),
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let m = vx.sum() / vx.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    /// Block-diagonal scores: row `i` of `q` against rows `i*group..(i+1)*group` of `k`.
    /// Returns an `n x group` matrix.
    pub fn group_scores(&mut self, q: Var, k: Var, group: usize) -> Result<Var> {
        let (vq, vk) = (self.value(q), self.value(k));
        if vq.cols() != vk.cols() || vk.rows() != vq.rows() * group {
            return Err(shape_err("group_scores", vq, vk));
        }
        let n = vq.rows();
        let mut out = vec![0.0; n * group];
        for i in 0..n {
            let qi = vq.row(i);
            for j in 0..group {
                out[i * group + j] = dot(qi, vk.row(i * group + j));
            }
        }
        let rg = self.rg(q) || self.rg(k);
        Ok(self.push(
            Tensor::from_vec_unchecked(n, group, out),
            Op::GroupScores { q, k, group },
            rg,
        ))
    }

    /// Block-diagonal mixing: row `i` is `sum_j w[i, j] * v[i*group + j]`.
    pub fn group_mix(&mut self, w: Var, v: Var, group: usize) -> Result<Var> {
        let (vw, vv) = (self.value(w), self.value(v));
        if vw.cols() != group || vv.rows() != vw.rows() * group {
            return Err(shape_err("group_mix", vw, vv));
        }
        let (n, d) = (vw.rows(), vv.cols());
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let orow = &mut out[i * d..(i + 1) * d];
            for j in 0..group {
                let wij = vw.get(i, j);
                for (o, &x) in orow.iter_mut().zip(vv.row(i * group + j)) {
                    *o += wij * x;
                }
            }
        }
        let rg = self.rg(w) || self.rg(v);
        Ok(self.push(Tensor::from_vec_unchecked(n, d, out), Op::GroupMix { w, v, group }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: lv.shape(),
                rhs: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            let (r, c) = self.value(v).shape();
            *slot = Some(Tensor::zeros(r, c));
        }
        f(slot.as_mut().expect("slot initialised"));
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| gemm_nt(g, vb, ga.data_mut()));
                self.accumulate(grads, *b, |gb| gemm_tn(va, g, gb.data_mut()));
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| gemm_nn(g, vb, ga.data_mut()));
                self.accumulate(grads, *b, |gb| gemm_tn(g, va, gb.data_mut()));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.add_assign(g));
                self.accumulate(grads, *b, |gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| ga.add_assign(g));
                self.accumulate(grads, *b, |gb| {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, |gx| gx.add_assign(g));
                self.accumulate(grads, *bias, |gb| {
                    let d = gb.cols().max(1);
                    for row in g.data().chunks(d) {
                        for (o, v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |ga| {
                    for ((o, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gv * bv;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, |gx| {
                    for (o, gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += s * gv;
                    }
                });
            }
            Op::Shift(x) => self.accumulate(grads, *x, |gx| gx.add_assign(g)),
            Op::Relu(x) => {
                let vx = self.value(*x);
                self.accumulate(grads, *x, |gx| {
                    for ((o, gv), xv) in gx.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Exp(x) => {
                let y = &node.value;
                self.accumulate(grads, *x, |gx| {
                    for ((o, gv), yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv;
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let c = y.cols().max(1);
                self.accumulate(grads, *x, |gx| {
                    for ((orow, grow), yrow) in gx
                        .data_mut()
                        .chunks_mut(c)
                        .zip(g.data().chunks(c))
                        .zip(y.data().chunks(c))
                    {
                        let s = dot(grow, yrow);
                        for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gv - s);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let vg = self.value(*gamma);
                let d = vg.cols();
                self.accumulate(grads, *gamma, |gg| {
                    for (grow, hrow) in g.data().chunks(d).zip(xhat.chunks(d)) {
                        for ((o, gv), hv) in gg.data_mut().iter_mut().zip(grow).zip(hrow) {
                            *o += gv * hv;
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for grow in g.data().chunks(d) {
                        for (o, gv) in gb.data_mut().iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                });
                self.accumulate(grads, *x, |gx| {
                    let mut dh = vec![0.0; d];
                    for (i, (orow, grow)) in gx.data_mut().chunks_mut(d).zip(g.data().chunks(d)).enumerate() {
                        let hrow = &xhat[i * d..(i + 1) * d];
                        for j in 0..d {
                            dh[j] = grow[j] * vg.data()[j];
                        }
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h = dot(&dh, hrow);
                        let k = inv_std[i] / d as f64;
                        for j in 0..d {
                            orow[j] += k * (d as f64 * dh[j] - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::MaxPoolRows { x, argmax } => {
                let d = argmax.len();
                self.accumulate(grads, *x, |gx| {
                    for (j, &r) in argmax.iter().enumerate() {
                        gx.data_mut()[r * d + j] += g.data()[j];
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.accumulate(grads, *p, |gp| {
                        for (orow, grow) in gp.data_mut().chunks_mut(w.max(1)).zip(g.data().chunks(total.max(1))) {
                            for (o, gv) in orow.iter_mut().zip(&grow[offset..offset + w]) {
                                *o += gv;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let w = g.cols();
                let total = self.value(*x).cols();
                self.accumulate(grads, *x, |gx| {
                    for (orow, grow) in gx.data_mut().chunks_mut(total.max(1)).zip(g.data().chunks(w.max(1))) {
                        for (o, gv) in orow[*start..*start + w].iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, |gx| gx.data_mut().iter_mut().for_each(|o| *o += gv));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let gv = g.item() / n;
                self.accumulate(grads, *x, |gx| gx.data_mut().iter_mut().for_each(|o| *o += gv));
            }
            Op::GroupScores { q, k, group } => {
                let (vq, vk) = (self.value(*q), self.value(*k));
                let d = vq.cols();
                let group = *group;
                self.accumulate(grads, *q, |gq| {
                    for i in 0..vq.rows() {
                        let orow = &mut gq.data_mut()[i * d..(i + 1) * d];
                        for j in 0..group {
                            let s = g.get(i, j);
                            for (o, kv) in orow.iter_mut().zip(vk.row(i * group + j)) {
                                *o += s * kv;
                            }
                        }
                    }
                });
                self.accumulate(grads, *k, |gk| {
                    for i in 0..vq.rows() {
                        let qi = vq.row(i);
                        for j in 0..group {
                            let s = g.get(i, j);
                            let r = i * group + j;
                            for (o, qv) in gk.data_mut()[r * d..(r + 1) * d].iter_mut().zip(qi) {
                                *o += s * qv;
                            }
                        }
                    }
                });
            }
            Op::GroupMix { w, v, group } => {
                let (vw, vv) = (self.value(*w), self.value(*v));
                let d = vv.cols();
                let group = *group;
                self.accumulate(grads, *w, |gw| {
                    for i in 0..vw.rows() {
                        let gi = g.row(i);
                        for j in 0..group {
                            gw.data_mut()[i * group + j] += dot(gi, vv.row(i * group + j));
                        }
                    }
                });
                self.accumulate(grads, *v, |gv| {
                    for i in 0..vw.rows() {
                        let gi = g.row(i);
                        for j in 0..group {
                            let wij = vw.get(i, j);
                            let r = i * group + j;
                            for (o, x) in gv.data_mut()[r * d..(r + 1) * d].iter_mut().zip(gi) {
                                *o += wij * x;
                            }
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
