//! Minimal reverse-mode autodiff over dense `f64` matrices.
//!
//! Forward values are computed eagerly as nodes are pushed; `backward` walks
//! the tape once and accumulates gradients into every leaf marked as
//! requiring them. The op set is exactly what the message-passing layers,
//! pooling modes, softmax head, and uncertainty objectives need — including
//! the degree-normalization chains that make adjacency entries
//! differentiable inputs.

use ndarray::{Array2, Axis};

/// Probabilities at or below this are treated as exact zeros by the entropy
/// op so `0 * ln 0` contributes nothing.
const ENTROPY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// Adds a constant matrix (the constant is folded into the value and
    /// irrelevant to the backward pass).
    AddConst(usize),
    MatMul(usize, usize),
    Add(usize, usize),
    /// X (n x m) plus a broadcast 1 x m bias row.
    AddBias(usize, usize),
    Relu(usize),
    /// n x m -> n x 1 row sums.
    RowSum(usize),
    /// Elementwise x^c for constant c.
    PowConst(usize, f64),
    /// Elementwise max(x, floor).
    ClampMin(usize, f64),
    /// Row i of X scaled by v[i]; v is n x 1.
    ScaleRows(usize, usize),
    /// Column j of X scaled by v[j]; v is m x 1.
    ScaleCols(usize, usize),
    MeanPool(usize),
    SumPool(usize),
    /// Column-wise max over rows; ties resolved to the lowest row index at
    /// forward time and the recorded rows receive the whole gradient.
    MaxPool(usize, Vec<usize>),
    /// Horizontal concatenation of same-height nodes.
    ConcatCols(Vec<usize>),
    /// Row-wise softmax.
    Softmax(usize),
    /// X (1 x c) dot a constant c x 1 weight -> 1 x 1 scalar.
    DotConst(usize, Array2<f64>),
    /// Shannon entropy of a probability row, natural log.
    Entropy(usize),
    /// Cross-entropy of a logit row against a class index, stable form.
    CrossEntropyLogits(usize, usize),
}

pub struct Tape {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
    requires: Vec<bool>,
}

/// Gradients keyed by tape node, populated by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn take(&mut self, id: NodeId) -> Option<Array2<f64>> {
        self.grads[id.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { values: Vec::new(), ops: Vec::new(), requires: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.values[id.0]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires: bool) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        NodeId(self.values.len() - 1)
    }

    fn req(&self, id: NodeId) -> bool {
        self.requires[id.0]
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn add_const(&mut self, x: NodeId, c: &Array2<f64>) -> NodeId {
        let v = &self.values[x.0] + c;
        self.push(v, Op::AddConst(x.0), self.req(x))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a.0].dot(&self.values[b.0]);
        self.push(v, Op::MatMul(a.0, b.0), self.req(a) || self.req(b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.values[a.0] + &self.values[b.0];
        self.push(v, Op::Add(a.0, b.0), self.req(a) || self.req(b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let v = &self.values[x.0] + &self.values[bias.0];
        self.push(v, Op::AddBias(x.0, bias.0), self.req(x) || self.req(bias))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(|a| a.max(0.0));
        self.push(v, Op::Relu(x.0), self.req(x))
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let s = self.values[x.0].sum_axis(Axis(1));
        let n = s.len();
        let v = s.into_shape_with_order((n, 1)).expect("row sums reshape");
        self.push(v, Op::RowSum(x.0), self.req(x))
    }

    pub fn pow_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.values[x.0].mapv(|a| a.powf(c));
        self.push(v, Op::PowConst(x.0, c), self.req(x))
    }

    pub fn clamp_min(&mut self, x: NodeId, floor: f64) -> NodeId {
        let v = self.values[x.0].mapv(|a| a.max(floor));
        self.push(v, Op::ClampMin(x.0, floor), self.req(x))
    }

    pub fn scale_rows(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let xv = &self.values[x.0];
        let sv = &self.values[v.0];
        let mut out = xv.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|a| a * sv[[i, 0]]);
        }
        self.push(out, Op::ScaleRows(x.0, v.0), self.req(x) || self.req(v))
    }

    pub fn scale_cols(&mut self, x: NodeId, v: NodeId) -> NodeId {
        let xv = &self.values[x.0];
        let sv = &self.values[v.0];
        let mut out = xv.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|a| a * sv[[j, 0]]);
        }
        self.push(out, Op::ScaleCols(x.0, v.0), self.req(x) || self.req(v))
    }

    pub fn mean_pool(&mut self, x: NodeId) -> NodeId {
        let xv = &self.values[x.0];
        let n = xv.nrows() as f64;
        let v = xv.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
        self.push(v, Op::MeanPool(x.0), self.req(x))
    }

    pub fn sum_pool(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumPool(x.0), self.req(x))
    }

    pub fn max_pool(&mut self, x: NodeId) -> NodeId {
        let xv = &self.values[x.0];
        let (n, m) = xv.dim();
        let mut argmax = vec![0usize; m];
        let mut v = Array2::zeros((1, m));
        for j in 0..m {
            let mut best = xv[[0, j]];
            for i in 1..n {
                if xv[[i, j]] > best {
                    best = xv[[i, j]];
                    argmax[j] = i;
                }
            }
            v[[0, j]] = best;
        }
        self.push(v, Op::MaxPool(x.0, argmax), self.req(x))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.values[parts[0].0].nrows();
        let total: usize = parts.iter().map(|p| self.values[p.0].ncols()).sum();
        let mut v = Array2::zeros((rows, total));
        let mut at = 0;
        for p in parts {
            let pv = &self.values[p.0];
            v.slice_mut(ndarray::s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        let requires = parts.iter().any(|&p| self.req(p));
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), requires)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = &self.values[x.0];
        let mut v = xv.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|a| (a - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|a| a / sum);
        }
        self.push(v, Op::Softmax(x.0), self.req(x))
    }

    pub fn dot_const(&mut self, x: NodeId, w: Array2<f64>) -> NodeId {
        let v = self.values[x.0].dot(&w);
        let requires = self.req(x);
        self.push(v, Op::DotConst(x.0, w), requires)
    }

    pub fn entropy(&mut self, p: NodeId) -> NodeId {
        let pv = &self.values[p.0];
        let h: f64 = pv.iter().map(|&x| if x > ENTROPY_FLOOR { -x * x.ln() } else { 0.0 }).sum();
        let v = Array2::from_elem((1, 1), h);
        self.push(v, Op::Entropy(p.0), self.req(p))
    }

    pub fn cross_entropy_logits(&mut self, logits: NodeId, label: usize) -> NodeId {
        let lv = &self.values[logits.0];
        let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = lv.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
        let loss = lse - lv[[0, label]];
        let v = Array2::from_elem((1, 1), loss);
        self.push(v, Op::CrossEntropyLogits(logits.0, label), self.req(logits))
    }

    /// Reverse pass from a 1 x 1 root; returns per-node gradients for every
    /// node on a `requires_grad` path.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.values[root.0].dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            if !self.requires[idx] {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.accumulate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }

    fn add_grad(
        &self,
        grads: &mut [Option<Array2<f64>>],
        target: usize,
        delta: Array2<f64>,
    ) {
        if !self.requires[target] {
            return;
        }
        match &mut grads[target] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(&self, idx: usize, dy: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::AddConst(x) => self.add_grad(grads, *x, dy.clone()),
            Op::MatMul(a, b) => {
                if self.requires[*a] {
                    self.add_grad(grads, *a, dy.dot(&self.values[*b].t()));
                }
                if self.requires[*b] {
                    self.add_grad(grads, *b, self.values[*a].t().dot(dy));
                }
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, dy.clone());
                self.add_grad(grads, *b, dy.clone());
            }
            Op::AddBias(x, bias) => {
                self.add_grad(grads, *x, dy.clone());
                if self.requires[*bias] {
                    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.add_grad(grads, *bias, db);
                }
            }
            Op::Relu(x) => {
                let mask = self.values[idx].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                self.add_grad(grads, *x, dy * &mask);
            }
            Op::RowSum(x) => {
                let xv = &self.values[*x];
                let mut dx = Array2::zeros(xv.dim());
                for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                    row.fill(dy[[i, 0]]);
                }
                self.add_grad(grads, *x, dx);
            }
            Op::PowConst(x, c) => {
                let dx = self.values[*x].mapv(|v| c * v.powf(c - 1.0)) * dy;
                self.add_grad(grads, *x, dx);
            }
            Op::ClampMin(x, floor) => {
                let mask = self.values[*x].mapv(|v| if v > *floor { 1.0 } else { 0.0 });
                self.add_grad(grads, *x, dy * &mask);
            }
            Op::ScaleRows(x, v) => {
                let xv = &self.values[*x];
                let sv = &self.values[*v];
                if self.requires[*x] {
                    let mut dx = dy.clone();
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        row.mapv_inplace(|a| a * sv[[i, 0]]);
                    }
                    self.add_grad(grads, *x, dx);
                }
                if self.requires[*v] {
                    let mut dv = Array2::zeros(sv.dim());
                    for i in 0..xv.nrows() {
                        let mut acc = 0.0;
                        for j in 0..xv.ncols() {
                            acc += dy[[i, j]] * xv[[i, j]];
                        }
                        dv[[i, 0]] = acc;
                    }
                    self.add_grad(grads, *v, dv);
                }
            }
            Op::ScaleCols(x, v) => {
                let xv = &self.values[*x];
                let sv = &self.values[*v];
                if self.requires[*x] {
                    let mut dx = dy.clone();
                    for (j, mut col) in dx.columns_mut().into_iter().enumerate() {
                        col.mapv_inplace(|a| a * sv[[j, 0]]);
                    }
                    self.add_grad(grads, *x, dx);
                }
                if self.requires[*v] {
                    let mut dv = Array2::zeros(sv.dim());
                    for j in 0..xv.ncols() {
                        let mut acc = 0.0;
                        for i in 0..xv.nrows() {
                            acc += dy[[i, j]] * xv[[i, j]];
                        }
                        dv[[j, 0]] = acc;
                    }
                    self.add_grad(grads, *v, dv);
                }
            }
            Op::MeanPool(x) => {
                let xv = &self.values[*x];
                let n = xv.nrows();
                let mut dx = Array2::zeros(xv.dim());
                for mut row in dx.rows_mut() {
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = dy[[0, j]] / n as f64;
                    }
                }
                self.add_grad(grads, *x, dx);
            }
            Op::SumPool(x) => {
                let xv = &self.values[*x];
                let mut dx = Array2::zeros(xv.dim());
                for mut row in dx.rows_mut() {
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot = dy[[0, j]];
                    }
                }
                self.add_grad(grads, *x, dx);
            }
            Op::MaxPool(x, argmax) => {
                let mut dx = Array2::zeros(self.values[*x].dim());
                for (j, &i) in argmax.iter().enumerate() {
                    dx[[i, j]] = dy[[0, j]];
                }
                self.add_grad(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.values[p].ncols();
                    let slice = dy.slice(ndarray::s![.., at..at + w]).to_owned();
                    self.add_grad(grads, p, slice);
                    at += w;
                }
            }
            Op::Softmax(x) => {
                let y = &self.values[idx];
                let mut dx = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    let mut dot = 0.0;
                    for j in 0..y.ncols() {
                        dot += dy[[i, j]] * y[[i, j]];
                    }
                    for j in 0..y.ncols() {
                        dx[[i, j]] = y[[i, j]] * (dy[[i, j]] - dot);
                    }
                }
                self.add_grad(grads, *x, dx);
            }
            Op::DotConst(x, w) => {
                self.add_grad(grads, *x, dy.dot(&w.t()));
            }
            Op::Entropy(p) => {
                let pv = &self.values[*p];
                let scale = dy[[0, 0]];
                let dx = pv.mapv(|v| {
                    if v > ENTROPY_FLOOR {
                        -(v.ln() + 1.0) * scale
                    } else {
                        0.0
                    }
                });
                self.add_grad(grads, *p, dx);
            }
            Op::CrossEntropyLogits(x, label) => {
                let lv = &self.values[*x];
                let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut soft = lv.mapv(|v| (v - max).exp());
                let sum = soft.sum();
                soft.mapv_inplace(|v| v / sum);
                soft[[0, *label]] -= 1.0;
                self.add_grad(grads, *x, soft * dy[[0, 0]]);
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}
