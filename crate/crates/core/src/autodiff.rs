//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so walking the node list backwards is a valid reverse
//! topological order. Leaves created with [`Tape::leaf`] receive gradients;
//! [`Tape::constant`] leaves and everything computed only from constants are
//! skipped during the backward sweep.

use crate::error::{contract, shape_err, Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, softmax_in_place, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * (-0.5 * x * x).exp() * INV_SQRT_2PI
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Attention {
        qkv: Var,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Assemble {
        visible: Var,
        fill: Var,
        layout: Vec<Option<usize>>,
    },
    MeanPool {
        x: Var,
        group: usize,
    },
    Sum(Var),
    Mean(Var),
    Reconstruction {
        pred: Var,
        target: Tensor,
        teacher: Option<(Tensor, f64)>,
        masked: Vec<Vec<usize>>,
        n_patches: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.value(a).zip_map(self.value(b), op, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `x · wᵀ + b` with `w` stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (m, k) = xv.rows_cols();
        if wv.rank() != 2 || wv.shape()[1] != k {
            return Err(shape_err("linear", xv.shape(), wv.shape()));
        }
        let n = wv.shape()[0];
        let mut out = gemm_nt(xv.data(), wv.data(), m, k, n);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [n] {
                return Err(shape_err("linear bias", &[n], bv.shape()));
            }
            for row in out.chunks_exact_mut(n) {
                for (o, &bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Linear { x, w, b }, ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        let ng = self.needs(x);
        self.push(value, Op::Gelu(x), ng)
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.rows_cols();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != [d] || b.shape() != [d] {
            return Err(shape_err("layer_norm", xv.shape(), g.shape()));
        }
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let (_, inv) = normalize_row(row, &mut xhat[r * d..(r + 1) * d], eps);
            inv_std[r] = inv;
            for j in 0..d {
                out[r * d + j] = xhat[r * d + j] * g.data()[j] + b.data()[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = self.value(x).softmax(axis)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Softmax { x, axis }, ng))
    }

    /// Multi-head scaled dot-product self-attention over packed `[q | k | v]`
    /// rows. `qkv` is `[batch·seq, 3·dim]`; the output is `[batch·seq, dim]`.
    pub fn attention(&mut self, qkv: Var, seq: usize, heads: usize) -> Result<Var> {
        let v = self.value(qkv);
        let (out, probs) = attention_forward(v, seq, heads)?;
        let ng = self.needs(qkv);
        Ok(self.push(out, Op::Attention { qkv, seq, heads, probs }, ng))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let value = self.value(x).gather_rows(&rows)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::GatherRows { x, rows }, ng))
    }

    /// Builds a token sequence where `layout[i]` is either a row of `visible`
    /// or, when `None`, a copy of the 1-D `fill` vector.
    pub fn assemble(&mut self, visible: Var, fill: Var, layout: Vec<Option<usize>>) -> Result<Var> {
        let vv = self.value(visible);
        let fv = self.value(fill);
        let (nv, d) = vv.rows_cols();
        if fv.shape() != [d] {
            return Err(shape_err("assemble", vv.shape(), fv.shape()));
        }
        let mut data = Vec::with_capacity(layout.len() * d);
        for slot in &layout {
            match *slot {
                Some(r) if r < nv => data.extend_from_slice(vv.row(r)),
                Some(r) => return Err(contract(format!("assemble row {r} out of range for {nv} rows"))),
                None => data.extend_from_slice(fv.data()),
            }
        }
        let value = Tensor::new(vec![layout.len(), d], data)?;
        let ng = self.needs(visible) || self.needs(fill);
        Ok(self.push(value, Op::Assemble { visible, fill, layout }, ng))
    }

    /// Mean over consecutive groups of `group` rows: `[b·group, d] -> [b, d]`.
    pub fn mean_pool(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.rows_cols();
        if group == 0 || rows % group != 0 {
            return Err(contract(format!("cannot pool {rows} rows in groups of {group}")));
        }
        let b = rows / group;
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let o = &mut out[i * d..(i + 1) * d];
            for t in 0..group {
                for (acc, &v) in o.iter_mut().zip(xv.row(i * group + t)) {
                    *acc += v;
                }
            }
            for acc in o.iter_mut() {
                *acc /= group as f64;
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::from_parts(vec![b, d], out), Op::MeanPool { x, group }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / v.len() as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Per-image masked reconstruction loss. `pred` and `target` are
    /// `[batch·n_patches, d]`; `masked[b]` lists the masked patch indices of
    /// image `b`. With a teacher `(preds, weight)` each masked patch adds
    /// `weight·‖pred − teacher‖²`. Returns a `[batch]` vector.
    pub fn reconstruction(
        &mut self,
        pred: Var,
        target: Tensor,
        teacher: Option<(Tensor, f64)>,
        masked: Vec<Vec<usize>>,
        n_patches: usize,
    ) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(shape_err("reconstruction", pv.shape(), target.shape()));
        }
        if let Some((t, _)) = &teacher {
            if t.shape() != pv.shape() {
                return Err(shape_err("reconstruction teacher", pv.shape(), t.shape()));
            }
        }
        let (rows, _) = pv.rows_cols();
        if rows != masked.len() * n_patches {
            return Err(contract(format!("{rows} prediction rows for {} images of {n_patches} patches", masked.len())));
        }
        let mut out = Vec::with_capacity(masked.len());
        for (b, idx) in masked.iter().enumerate() {
            if idx.is_empty() {
                return Err(contract("reconstruction loss needs at least one masked patch"));
            }
            let rows: Vec<usize> = idx.iter().map(|&i| b * n_patches + i).collect();
            out.push(masked_rows_loss(pv, &target, teacher.as_ref().map(|(t, w)| (t, *w)), &rows));
        }
        let ng = self.needs(pred);
        let value = Tensor::from_parts(vec![out.len()], out);
        Ok(self.push(value, Op::Reconstruction { pred, target, teacher, masked, n_patches }, ng))
    }

    /// Per-row cross-entropy `−log softmax(logits)[label]`, `[b, k] -> [b]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let lv = self.value(logits);
        let (b, k) = lv.rows_cols();
        if labels.len() != b {
            return Err(shape_err("cross_entropy", lv.shape(), &[labels.len()]));
        }
        let mut probs = Vec::with_capacity(b * k);
        let mut out = Vec::with_capacity(b);
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row(r);
            out.push(cross_entropy_row(row, label)?);
            let mut p = row.to_vec();
            softmax_in_place(&mut p);
            probs.extend(p);
        }
        let ng = self.needs(logits);
        Ok(self.push(Tensor::from_parts(vec![b], out), Op::CrossEntropy { logits, labels, probs }, ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(contract(format!("backward needs a scalar root, got shape {:?}", self.value(loss).shape())));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| self.value(v);
        let mut send = |v: Var, contribution: Vec<f64>| {
            if self.needs(v) {
                accumulate(&mut grads[v.0], contribution);
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                send(*a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                send(*b, g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|x| x * c).collect()),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    send(*a, gemm_nt(g, bv.data(), m, n, k));
                }
                if self.needs(*b) {
                    send(*b, gemm_tn(av.data(), g, m, k, n));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, k) = xv.rows_cols();
                let n = wv.shape()[0];
                if self.needs(*x) {
                    send(*x, gemm_nn(g, wv.data(), m, n, k));
                }
                if self.needs(*w) {
                    send(*w, gemm_tn(g, xv.data(), m, n, k));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut db = vec![0.0; n];
                        for row in g.chunks_exact(n) {
                            for (d, &r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                        send(*b, db);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x).data();
                send(*x, g.iter().zip(xv).map(|(gi, &xi)| gi * gelu_grad(xi)).collect());
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = val(*gamma).len();
                let gam = val(*gamma).data();
                if self.needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xr[j];
                        }
                        let df = d as f64;
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            dx[r * d + j] = inv / df * (df * dxh - sum_dxhat - xr[j] * sum_dxhat_xhat);
                        }
                    }
                    send(*x, dx);
                }
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                    }
                }
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let shape = y.shape();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let yd = y.data();
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|l| g[base + l * inner] * yd[base + l * inner]).sum();
                        for l in 0..len {
                            let at = base + l * inner;
                            dx[at] = yd[at] * (g[at] - dot);
                        }
                    }
                }
                send(*x, dx);
            }
            Op::Attention { qkv, seq, heads, probs } => {
                send(*qkv, attention_backward(val(*qkv), probs, g, *seq, *heads));
            }
            Op::GatherRows { x, rows } => {
                let (_, d) = node.value.rows_cols();
                let mut dx = vec![0.0; val(*x).len()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..d {
                        dx[r * d + j] += g[i * d + j];
                    }
                }
                send(*x, dx);
            }
            Op::Assemble { visible, fill, layout } => {
                let d = val(*fill).len();
                let mut dv = vec![0.0; val(*visible).len()];
                let mut df = vec![0.0; d];
                for (i, slot) in layout.iter().enumerate() {
                    let gr = &g[i * d..(i + 1) * d];
                    let dst = match slot {
                        Some(r) => &mut dv[r * d..(r + 1) * d],
                        None => &mut df[..],
                    };
                    for (a, &b) in dst.iter_mut().zip(gr) {
                        *a += b;
                    }
                }
                send(*visible, dv);
                send(*fill, df);
            }
            Op::MeanPool { x, group } => {
                let (_, d) = node.value.rows_cols();
                let inv = 1.0 / *group as f64;
                let mut dx = vec![0.0; val(*x).len()];
                for (r, chunk) in dx.chunks_exact_mut(d).enumerate() {
                    let gr = &g[(r / group) * d..(r / group + 1) * d];
                    for (a, &b) in chunk.iter_mut().zip(gr) {
                        *a = b * inv;
                    }
                }
                send(*x, dx);
            }
            Op::Sum(x) => send(*x, vec![g[0]; val(*x).len()]),
            Op::Mean(x) => {
                let n = val(*x).len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Reconstruction { pred, target, teacher, masked, n_patches } => {
                let pv = val(*pred);
                let (_, d) = pv.rows_cols();
                let mut dp = vec![0.0; pv.len()];
                for (b, idx) in masked.iter().enumerate() {
                    let scale = g[b] / idx.len() as f64;
                    for &i in idx {
                        let r = b * n_patches + i;
                        for j in r * d..(r + 1) * d {
                            let p = pv.data()[j];
                            let mut dj = 2.0 * (p - target.data()[j]);
                            if let Some((t, w)) = teacher {
                                dj += 2.0 * w * (p - t.data()[j]);
                            }
                            dp[j] = scale * dj;
                        }
                    }
                }
                send(*pred, dp);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = val(*logits).rows_cols().1;
                let mut dl = vec![0.0; probs.len()];
                for (r, &label) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        dl[r * k + j] = g[r] * (probs[r * k + j] - onehot);
                    }
                }
                send(*logits, dl);
            }
        }
        Ok(())
    }
}

/// Writes the normalised row into `out`; returns `(mean, 1/sqrt(var + eps))`.
pub(crate) fn normalize_row(row: &[f64], out: &mut [f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - mean) * inv;
    }
    (mean, inv)
}

/// `(1/|M|)·Σ_{r∈rows} (‖t_r − p_r‖² + w·‖p_r − q_r‖²)` with a fixed
/// summation order shared by the tape op and the standalone loss functions.
pub(crate) fn masked_rows_loss(pred: &Tensor, target: &Tensor, teacher: Option<(&Tensor, f64)>, rows: &[usize]) -> f64 {
    let mut total = 0.0;
    for &r in rows {
        let p = pred.row(r);
        let t = target.row(r);
        let mut recon = 0.0;
        for (&ti, &pi) in t.iter().zip(p) {
            let e = ti - pi;
            recon += e * e;
        }
        match teacher {
            Some((q, w)) => {
                let mut cons = 0.0;
                for (&pi, &qi) in p.iter().zip(q.row(r)) {
                    let e = pi - qi;
                    cons += e * e;
                }
                total += recon + w * cons;
            }
            None => total += recon,
        }
    }
    total / rows.len() as f64
}

pub(crate) fn cross_entropy_row(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(contract(format!("label {label} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

fn attention_dims(qkv: &Tensor, seq: usize, heads: usize) -> Result<(usize, usize, usize)> {
    let (rows, cols) = qkv.rows_cols();
    if cols % 3 != 0 || seq == 0 || rows % seq != 0 || heads == 0 || (cols / 3) % heads != 0 {
        return Err(Error::Contract(format!(
            "attention over shape {:?} with seq {seq} and {heads} heads",
            qkv.shape()
        )));
    }
    Ok((rows / seq, cols / 3, cols / 3 / heads))
}

/// Attention probabilities `[batch, heads, seq, seq]` flattened.
pub fn attention_probs(qkv: &Tensor, seq: usize, heads: usize) -> Result<Vec<f64>> {
    Ok(attention_forward(qkv, seq, heads)?.1)
}

fn attention_forward(qkv: &Tensor, seq: usize, heads: usize) -> Result<(Tensor, Vec<f64>)> {
    let (batch, dim, hd) = attention_dims(qkv, seq, heads)?;
    let x = qkv.data();
    let stride = 3 * dim;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; batch * seq * dim];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            for t in 0..seq {
                let q = &x[(b * seq + t) * stride + h * hd..][..hd];
                let row = &mut p[t * seq..(t + 1) * seq];
                for (s, r) in row.iter_mut().enumerate() {
                    let k = &x[(b * seq + s) * stride + dim + h * hd..][..hd];
                    *r = q.iter().zip(k).map(|(a, c)| a * c).sum::<f64>() * scale;
                }
                softmax_in_place(row);
                let o = &mut out[(b * seq + t) * dim + h * hd..][..hd];
                for (s, &ps) in row.iter().enumerate() {
                    let v = &x[(b * seq + s) * stride + 2 * dim + h * hd..][..hd];
                    for (oo, &vv) in o.iter_mut().zip(v) {
                        *oo += ps * vv;
                    }
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![batch * seq, dim], out), probs))
}

fn attention_backward(qkv: &Tensor, probs: &[f64], g: &[f64], seq: usize, heads: usize) -> Vec<f64> {
    let (rows, cols) = qkv.rows_cols();
    let (batch, dim, hd) = (rows / seq, cols / 3, cols / 3 / heads);
    let x = qkv.data();
    let stride = 3 * dim;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dx = vec![0.0; x.len()];
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            let q_at = |t: usize| (b * seq + t) * stride + h * hd;
            let k_at = |t: usize| (b * seq + t) * stride + dim + h * hd;
            let v_at = |t: usize| (b * seq + t) * stride + 2 * dim + h * hd;
            for t in 0..seq {
                let go = &g[(b * seq + t) * dim + h * hd..][..hd];
                let prow = &p[t * seq..(t + 1) * seq];
                for s in 0..seq {
                    let v = &x[v_at(s)..][..hd];
                    dp[s] = go.iter().zip(v).map(|(a, c)| a * c).sum();
                    let pts = prow[s];
                    for (dv, &goo) in dx[v_at(s)..][..hd].iter_mut().zip(go) {
                        *dv += pts * goo;
                    }
                }
                let dot: f64 = prow.iter().zip(&dp).map(|(a, c)| a * c).sum();
                for s in 0..seq {
                    let ds = prow[s] * (dp[s] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for d in 0..hd {
                        let kd = x[k_at(s) + d];
                        let qd = x[q_at(t) + d];
                        dx[q_at(t) + d] += ds * kd;
                        dx[k_at(s) + d] += ds * qd;
                    }
                }
            }
        }
    }
    dx
}
