//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly: each call computes its value
//! immediately and appends a node holding the value plus whatever the
//! backward rule needs. [`Graph::backward`] walks the tape in reverse once.

use super::tensor::{gemm, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{LdamError, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The nine parameter handles of one GRU cell, in the order
/// `w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddColBias(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Conv1dSame { x: Var, w: Var, b: Var },
    MaxPoolChannels { x: Var, argmax: Vec<usize> },
    Gru { x: Var, h: Var, p: GruVars, z: Vec<f64>, r: Vec<f64>, cand: Vec<f64>, rh: Vec<f64> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    PadRows(Var),
    Sum(Var),
    Bce { yhat: Var, grad: Vec<f64> },
    SoftmaxCeColumns { x: Var, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// A single-threaded computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

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

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node took part.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor shaped like the node's value (zeros if absent).
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, parents: &[Var], op: Op) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(LdamError::Dimension(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(LdamError::Dimension(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(&[m, n], out)?, &[a, b], Op::MatMul(a, b)))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::new(va.shape(), va.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(t, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(t, &[a, b], Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(t, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x * c);
        self.push(t, &[a], Op::Scale(a, c))
    }

    /// `x[m×n] + b[m]`, broadcasting the bias across columns.
    pub fn add_col_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(b).len() != m {
            return Err(LdamError::Dimension(format!("bias of {} for {m} rows", self.value(b).len())));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            out[i * n..(i + 1) * n].iter_mut().for_each(|v| *v += bias[i]);
        }
        Ok(self.push(Tensor::new(&[m, n], out)?, &[x, b], Op::AddColBias(x, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        Ok(self.push(t, &[a], Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, &[a], Op::Reshape(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, &[a], Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, &[a], Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, &[a], Op::Tanh(a))
    }

    /// Softmax over all entries, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let t = Tensor::new(va.shape(), softmax_slice(va.data())).expect("same shape");
        self.push(t, &[a], Op::Softmax(a))
    }

    /// Length-preserving 1-D cross-correlation with symmetric zero padding.
    ///
    /// `x` is `C_in×L`, `w` is `C_out×C_in×k` with odd `k`, `b` is `C_out`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (c_in, len) = self.value(x).dims2()?;
        let (c_out, wc, k) = match self.value(w).shape() {
            [o, c, k] => (*o, *c, *k),
            s => return Err(LdamError::Dimension(format!("conv kernel shape {s:?}"))),
        };
        if k % 2 == 0 {
            return Err(LdamError::Config(format!("conv kernel width {k} must be odd")));
        }
        if wc != c_in {
            return Err(LdamError::Dimension(format!("conv expects {wc} input channels, got {c_in}")));
        }
        if self.value(b).len() != c_out {
            return Err(LdamError::Dimension("conv bias length".into()));
        }
        let pad = (k - 1) / 2;
        let (xs, ws, bs) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; c_out * len];
        for o in 0..c_out {
            let orow = &mut out[o * len..(o + 1) * len];
            orow.fill(bs[o]);
            for c in 0..c_in {
                let xrow = &xs[c * len..(c + 1) * len];
                for j in 0..k {
                    let wv = ws[(o * c_in + c) * k + j];
                    if wv == 0.0 {
                        continue;
                    }
                    for (l, ov) in orow.iter_mut().enumerate() {
                        let src = l + j;
                        if src >= pad && src - pad < len {
                            *ov += wv * xrow[src - pad];
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(&[c_out, len], out)?, &[x, w, b], Op::Conv1dSame { x, w, b }))
    }

    /// Max over the channel axis of a `C×L` matrix, giving length `L`.
    /// Ties resolve to the lowest channel index.
    pub fn maxpool_channels(&mut self, x: Var) -> Result<Var> {
        let (c, len) = self.value(x).dims2()?;
        let xs = self.value(x).data();
        let mut out = vec![0.0; len];
        let mut argmax = vec![0; len];
        for l in 0..len {
            let mut best = xs[l];
            for ch in 1..c {
                let v = xs[ch * len + l];
                if v > best {
                    best = v;
                    argmax[l] = ch;
                }
            }
            out[l] = best;
        }
        Ok(self.push(Tensor::vector(out), &[x], Op::MaxPoolChannels { x, argmax }))
    }

    /// One gated-recurrent-unit step over a batch of rows.
    ///
    /// `x` is `B×in`, `h` is `B×H`; returns the next `B×H` state
    /// `(1−z)⊙h + z⊙h̃` with the reset gate applied before `U_h`.
    pub fn gru_step(&mut self, p: &GruVars, x: Var, h: Var) -> Result<Var> {
        let (bsz, input) = self.value(x).dims2()?;
        let (bh, hidden) = self.value(h).dims2()?;
        if bh != bsz {
            return Err(LdamError::Dimension(format!("gru batch {bsz} vs state batch {bh}")));
        }
        for (w, u, b) in [(p.w_z, p.u_z, p.b_z), (p.w_r, p.u_r, p.b_r), (p.w_h, p.u_h, p.b_h)] {
            if self.value(w).shape() != [hidden, input]
                || self.value(u).shape() != [hidden, hidden]
                || self.value(b).len() != hidden
            {
                return Err(LdamError::Dimension(format!(
                    "gru params inconsistent with input {input}, hidden {hidden}"
                )));
            }
        }
        let xv = self.value(x).data();
        let hv = self.value(h).data();
        let n = bsz * hidden;
        let pre = |w: Var, u: Var, b: Var, hin: &[f64]| {
            let mut a = vec![0.0; n];
            gemm_nt_acc(xv, self.value(w).data(), &mut a, bsz, input, hidden);
            gemm_nt_acc(hin, self.value(u).data(), &mut a, bsz, hidden, hidden);
            let bias = self.value(b).data();
            for (i, v) in a.iter_mut().enumerate() {
                *v += bias[i % hidden];
            }
            a
        };
        let z: Vec<f64> = pre(p.w_z, p.u_z, p.b_z, hv).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = pre(p.w_r, p.u_r, p.b_r, hv).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(hv).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = pre(p.w_h, p.u_h, p.b_h, &rh).into_iter().map(f64::tanh).collect();
        let out: Vec<f64> = (0..n).map(|i| (1.0 - z[i]) * hv[i] + z[i] * cand[i]).collect();
        let parents = [x, h, p.w_z, p.w_r, p.w_h, p.u_z, p.u_r, p.u_h, p.b_z, p.b_r, p.b_h];
        let value = Tensor::new(&[bsz, hidden], out)?;
        Ok(self.push(value, &parents, Op::Gru { x, h, p: *p, z, r, cand, rh }))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| LdamError::Empty("concat of nothing".into()))?;
        let cols = self.value(*first).dims2()?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(LdamError::Dimension("concat_rows column mismatch".into()));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new(&[rows, cols], data)?, parts, Op::ConcatRows(parts.to_vec())))
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| LdamError::Empty("concat of nothing".into()))?;
        let rows = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(LdamError::Dimension("concat_cols row mismatch".into()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::new(&[rows, total], data)?, parts, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if start >= end || end > r {
            return Err(LdamError::Dimension(format!("row slice {start}..{end} of {r}")));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        Ok(self.push(Tensor::new(&[end - start, c], data)?, &[a], Op::SliceRows(a, start)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if start >= end || end > c {
            return Err(LdamError::Dimension(format!("column slice {start}..{end} of {c}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        Ok(self.push(Tensor::new(&[r, end - start], data)?, &[a], Op::SliceCols(a, start)))
    }

    /// Appends zero rows so the matrix has `rows` rows.
    pub fn pad_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if rows < r {
            return Err(LdamError::Dimension(format!("cannot pad {r} rows down to {rows}")));
        }
        let mut data = self.value(a).data().to_vec();
        data.resize(rows * c, 0.0);
        Ok(self.push(Tensor::new(&[rows, c], data)?, &[a], Op::PadRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets.
    /// Probabilities are clamped to `[1e-12, 1−1e-12]`; clamped entries pass no gradient.
    pub fn bce_mean(&mut self, yhat: Var, targets: &[f64]) -> Result<Var> {
        let p = self.value(yhat).data();
        if p.len() != targets.len() {
            return Err(LdamError::Dimension(format!("{} predictions for {} targets", p.len(), targets.len())));
        }
        let n = p.len() as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(p.len());
        for (&pi, &yi) in p.iter().zip(targets) {
            let c = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= yi * c.ln() + (1.0 - yi) * (1.0 - c).ln();
            grad.push(if c == pi { (c - yi) / (c * (1.0 - c)) / n } else { 0.0 });
        }
        Ok(self.push(Tensor::scalar(loss / n), &[yhat], Op::Bce { yhat, grad }))
    }

    /// Mean over columns `j` of `−log softmax(x[:, j])[j]` for a `K×N` matrix with `K ≥ N`.
    pub fn softmax_ce_columns(&mut self, x: Var) -> Result<Var> {
        let (k, n) = self.value(x).dims2()?;
        if k < n {
            return Err(LdamError::Dimension(format!("{k} classes for {n} columns")));
        }
        let xs = self.value(x).data();
        let mut probs = vec![0.0; k * n];
        let mut loss = 0.0;
        for j in 0..n {
            let col: Vec<f64> = (0..k).map(|i| xs[i * n + j]).collect();
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - col[j];
            for i in 0..k {
                probs[i * n + j] = (col[i] - lse).exp();
            }
        }
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(value, &[x], Op::SoftmaxCeColumns { x, probs }))
    }

    /// Propagates `∂loss/∂node` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(LdamError::Graph("backward called twice without zero_grad".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(LdamError::Graph(format!("loss must be a scalar, got shape {:?}", self.value(loss).shape())));
        }
        if !self.requires_grad(loss) {
            return Err(LdamError::Graph("loss is detached from every parameter".into()));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else { continue };
            if !self.nodes[i].requires_grad {
                self.nodes[i].grad = Some(g);
                continue;
            }
            let contributions = self.node_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, d) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(d),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| self.value(v);
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let n = val(*b).dims2().unwrap().1;
                let mut res = Vec::new();
                if needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(g, val(*b).data(), &mut da, m, n, k);
                    res.push((*a, da));
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(val(*a).data(), g, &mut db, m, k, n);
                    res.push((*b, db));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                vec![
                    (*a, g.iter().zip(vb).map(|(x, y)| x * y).collect()),
                    (*b, g.iter().zip(va).map(|(x, y)| x * y).collect()),
                ]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|x| x * c).collect())],
            Op::AddColBias(x, b) => {
                let (m, n) = out.dims2().unwrap();
                let db = (0..m).map(|r| g[r * n..(r + 1) * n].iter().sum()).collect();
                vec![(*x, g.to_vec()), (*b, db)]
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims2().unwrap();
                let gt = Tensor::new(&[r, c], g.to_vec()).unwrap().transpose().unwrap();
                vec![(*a, gt.into_data())]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Relu(a) => {
                let d = g.iter().zip(val(*a).data()).map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 });
                vec![(*a, d.collect())]
            }
            Op::Sigmoid(a) => {
                vec![(*a, g.iter().zip(out.data()).map(|(gi, y)| gi * y * (1.0 - y)).collect())]
            }
            Op::Tanh(a) => vec![(*a, g.iter().zip(out.data()).map(|(gi, y)| gi * (1.0 - y * y)).collect())],
            Op::Softmax(a) => {
                let y = out.data();
                let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                vec![(*a, g.iter().zip(y).map(|(gi, yi)| yi * (gi - dot)).collect())]
            }
            Op::Conv1dSame { x, w, b } => {
                let (c_in, len) = val(*x).dims2().unwrap();
                let (c_out, k) = (val(*w).shape()[0], val(*w).shape()[2]);
                let pad = (k - 1) / 2;
                let (xs, ws) = (val(*x).data(), val(*w).data());
                let mut dx = vec![0.0; c_in * len];
                let mut dw = vec![0.0; ws.len()];
                let db = (0..c_out).map(|o| g[o * len..(o + 1) * len].iter().sum()).collect();
                for o in 0..c_out {
                    let grow = &g[o * len..(o + 1) * len];
                    for c in 0..c_in {
                        for j in 0..k {
                            let widx = (o * c_in + c) * k + j;
                            let wv = ws[widx];
                            let mut acc = 0.0;
                            for (l, &gv) in grow.iter().enumerate() {
                                let src = l + j;
                                if src >= pad && src - pad < len {
                                    let xi = c * len + src - pad;
                                    acc += gv * xs[xi];
                                    dx[xi] += wv * gv;
                                }
                            }
                            dw[widx] += acc;
                        }
                    }
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::MaxPoolChannels { x, argmax } => {
                let (c, len) = val(*x).dims2().unwrap();
                let mut dx = vec![0.0; c * len];
                for (l, &ch) in argmax.iter().enumerate() {
                    dx[ch * len + l] = g[l];
                }
                vec![(*x, dx)]
            }
            Op::Gru { x, h, p, z, r, cand, rh } => self.gru_backward(g, *x, *h, p, z, r, cand, rh),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let n = val(p).len();
                        let d = g[off..off + n].to_vec();
                        off += n;
                        (p, d)
                    })
                    .collect()
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2().unwrap();
                let mut off = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let w = val(p).dims2().unwrap().1;
                        let mut d = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            d.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        off += w;
                        (p, d)
                    })
                    .collect()
            }
            Op::SliceRows(a, start) => {
                let c = out.dims2().unwrap().1;
                let mut d = vec![0.0; val(*a).len()];
                d[start * c..start * c + g.len()].copy_from_slice(g);
                vec![(*a, d)]
            }
            Op::SliceCols(a, start) => {
                let (r, w) = out.dims2().unwrap();
                let c = val(*a).dims2().unwrap().1;
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                vec![(*a, d)]
            }
            Op::PadRows(a) => vec![(*a, g[..val(*a).len()].to_vec())],
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::Bce { yhat, grad } => vec![(*yhat, grad.iter().map(|d| d * g[0]).collect())],
            Op::SoftmaxCeColumns { x, probs } => {
                let (k, n) = val(*x).dims2().unwrap();
                let mut d: Vec<f64> = probs.iter().map(|p| p * g[0] / n as f64).collect();
                for j in 0..n.min(k) {
                    d[j * n + j] -= g[0] / n as f64;
                }
                vec![(*x, d)]
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gru_backward(
        &self,
        g: &[f64],
        x: Var,
        h: Var,
        p: &GruVars,
        z: &[f64],
        r: &[f64],
        cand: &[f64],
        rh: &[f64],
    ) -> Vec<(Var, Vec<f64>)> {
        let (bsz, input) = self.value(x).dims2().unwrap();
        let hidden = self.value(h).dims2().unwrap().1;
        let (xv, hv) = (self.value(x).data(), self.value(h).data());
        let n = bsz * hidden;

        let mut dh = vec![0.0; n];
        let mut da_z = vec![0.0; n];
        let mut da_h = vec![0.0; n];
        for i in 0..n {
            dh[i] = g[i] * (1.0 - z[i]);
            da_z[i] = g[i] * (cand[i] - hv[i]) * z[i] * (1.0 - z[i]);
            da_h[i] = g[i] * z[i] * (1.0 - cand[i] * cand[i]);
        }
        // d(r⊙h) = da_h · U_h
        let mut drh = vec![0.0; n];
        gemm(&da_h, self.value(p.u_h).data(), &mut drh, bsz, hidden, hidden);
        let mut da_r = vec![0.0; n];
        for i in 0..n {
            dh[i] += drh[i] * r[i];
            da_r[i] = drh[i] * hv[i] * r[i] * (1.0 - r[i]);
        }

        let mut dx = vec![0.0; bsz * input];
        let mut tmp = vec![0.0; bsz * input];
        let mut tmp_h = vec![0.0; n];
        for (da, w, u) in [(&da_z, p.w_z, p.u_z), (&da_r, p.w_r, p.u_r), (&da_h, p.w_h, p.u_h)] {
            gemm(da, self.value(w).data(), &mut tmp, bsz, hidden, input);
            dx.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            if u != p.u_h {
                gemm(da, self.value(u).data(), &mut tmp_h, bsz, hidden, hidden);
                dh.iter_mut().zip(&tmp_h).for_each(|(a, b)| *a += b);
            }
        }

        let weight_grad = |da: &[f64], inp: &[f64], cols: usize| {
            let mut d = vec![0.0; hidden * cols];
            gemm_tn_acc(da, inp, &mut d, bsz, hidden, cols);
            d
        };
        let bias_grad = |da: &[f64]| {
            let mut d = vec![0.0; hidden];
            for (i, v) in da.iter().enumerate() {
                d[i % hidden] += v;
            }
            d
        };
        vec![
            (x, dx),
            (h, dh),
            (p.w_z, weight_grad(&da_z, xv, input)),
            (p.w_r, weight_grad(&da_r, xv, input)),
            (p.w_h, weight_grad(&da_h, xv, input)),
            (p.u_z, weight_grad(&da_z, hv, hidden)),
            (p.u_r, weight_grad(&da_r, hv, hidden)),
            (p.u_h, weight_grad(&da_h, rh, hidden)),
            (p.b_z, bias_grad(&da_z)),
            (p.b_r, bias_grad(&da_r)),
            (p.b_h, bias_grad(&da_h)),
        ]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
