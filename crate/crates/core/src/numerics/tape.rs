//! Tape-based reverse-mode automatic differentiation over matrices.
//!
//! Every value on the tape is viewed as a `rows × cols` matrix (a 1-D tensor
//! is a single row). Nodes are appended in evaluation order, so replaying them
//! backwards is a reverse topological traversal that visits each node once.
//! Nodes whose inputs carry no gradient requirement are never visited during
//! the backward pass, which keeps frozen sub-graphs cheap.

use std::collections::HashMap;

use super::param::Parameter;
use super::tensor::{cross_entropy_raw, gemm_acc, gemm_at_acc, gemm_bt_acc, layernorm_raw, softmax_slice, Tensor};
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    Embed { name: String, ids: Vec<usize>, table_len: usize },
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows { a: Var, idx: Vec<usize> },
    MeanRows(Var),
    RowDot(Var, Var),
    MulCol(Var, Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Grads {
    nodes: Vec<Option<Vec<f64>>>,
    params: HashMap<String, Vec<f64>>,
}

impl Grads {
    /// Gradient with respect to a tape value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(Vec::as_slice)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("internal shape")
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Grads::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a named parameter; repeated calls with the same name reuse
    /// the first node so gradients accumulate in one place.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.params.get(&p.name) {
            return v;
        }
        let v = self.push(p.value.clone(), Op::Param(p.name.clone()), p.trainable);
        self.params.insert(p.name.clone(), v);
        v
    }

    /// Row lookup into an embedding table without copying the table.
    pub fn embed(&mut self, table: &Parameter, ids: &[usize]) -> Result<Var> {
        let d = table.value.cols();
        let rows = table.value.rows();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index(format!("id {id} outside table {} of {rows} rows", table.name)));
            }
            out.extend_from_slice(table.value.row(id));
        }
        Ok(self.push(
            mat(ids.len(), d, out),
            Op::Embed { name: table.name.clone(), ids: ids.to_vec(), table_len: table.value.len() },
            table.trainable,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (k2, n) = dims(self.value(b));
        if k != k2 {
            return Err(dim_err(format!(
                "matmul inner dimensions disagree: {:?} · {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(mat(m, n, out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (n, k2) = dims(self.value(b));
        if k != k2 {
            return Err(dim_err(format!(
                "matmul_bt widths disagree: {:?} · {:?}ᵀ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(mat(m, n, out), Op::MatMulBT(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if dims(self.value(a)) != dims(self.value(b)) {
            return Err(dim_err(format!("{what}: {:?} vs {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = dims(self.value(a));
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(mat(r, c, out), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a length-`cols` bias to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if self.value(bias).len() != c {
            return Err(dim_err(format!("bias {:?} for rows of width {c}", self.value(bias).shape())));
        }
        let mut out = self.value(a).data().to_vec();
        let b = self.value(bias).data();
        for row in out.chunks_mut(c) {
            for (o, v) in row.iter_mut().zip(b) {
                *o += v;
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(mat(r, c, out), Op::AddRow(a, bias), ng))
    }

    /// Adds a constant of identical shape (used for attention masks).
    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        let (r, cols) = dims(self.value(a));
        if c.len() != r * cols {
            return Err(dim_err(format!("constant of length {} for {r}×{cols}", c.len())));
        }
        let out = self.value(a).data().iter().zip(c).map(|(x, y)| x + y).collect();
        let ng = self.needs(a);
        Ok(self.push(mat(r, cols, out), Op::AddConst(a), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = dims(self.value(a));
        let out = self.value(a).data().iter().map(|x| x * s).collect();
        let ng = self.needs(a);
        self.push(mat(r, c, out), Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.value(a));
        let out = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let ng = self.needs(a);
        self.push(mat(r, c, out), Op::Relu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.value(a));
        let mut out = vec![0.0; r * c];
        let x = self.value(a).data();
        for i in 0..r {
            softmax_slice(&x[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let ng = self.needs(a);
        self.push(mat(r, c, out), Op::SoftmaxRows(a), ng)
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, d) = dims(self.value(x));
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(dim_err(format!("layernorm width {d} vs gamma/beta")));
        }
        let out = layernorm_raw(self.value(x).data(), self.value(gamma).data(), self.value(beta).data(), d, eps);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(mat(r, d, out.y), Op::LayerNorm { x, gamma, beta, xhat: out.xhat, inv_std: out.inv_std }, ng))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if start >= end || end > c {
            return Err(dim_err(format!("column slice {start}..{end} of width {c}")));
        }
        let w = end - start;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + end]);
        }
        let ng = self.needs(a);
        Ok(self.push(mat(r, w, out), Op::SliceCols { a, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map(|&p| self.value(p).rows()).ok_or_else(|| dim_err("concat of nothing"))?;
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(dim_err("concat_cols row counts disagree"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            let c = v.cols();
            for i in 0..r {
                out[i * total + off..i * total + off + c].copy_from_slice(v.row(i));
            }
            off += c;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(mat(r, total, out), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map(|&p| self.value(p).cols()).ok_or_else(|| dim_err("concat of nothing"))?;
        if parts.iter().any(|&p| self.value(p).cols() != c) {
            return Err(dim_err("concat_rows widths disagree"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let r = out.len() / c;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(mat(r, c, out), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Index(format!("row {i} of {r}")));
            }
            out.extend_from_slice(self.value(a).row(i));
        }
        let ng = self.needs(a);
        Ok(self.push(mat(idx.len(), c, out), Op::SelectRows { a, idx: idx.to_vec() }, ng))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.value(a));
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(self.value(a).row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let ng = self.needs(a);
        self.push(mat(1, c, out), Op::MeanRows(a), ng)
    }

    /// Row-wise inner products: `[r×c] , [r×c] → [r×1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (r, c) = dims(self.value(a));
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out = (0..r)
            .map(|i| x[i * c..(i + 1) * c].iter().zip(&y[i * c..(i + 1) * c]).map(|(p, q)| p * q).sum())
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(mat(r, 1, out), Op::RowDot(a, b), ng))
    }

    /// Scales row `i` of `a` by `s[i]`, where `s` is `[r×1]`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if self.value(s).len() != r {
            return Err(dim_err(format!("row scale of length {} for {r} rows", self.value(s).len())));
        }
        let mut out = self.value(a).data().to_vec();
        for (i, row) in out.chunks_mut(c).enumerate() {
            let k = self.value(s).data()[i];
            for v in row {
                *v *= k;
            }
        }
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(mat(r, c, out), Op::MulCol(a, s), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(mat(1, 1, vec![s]), Op::Sum(a), ng)
    }

    /// Mean cross entropy of `[batch × C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, c) = dims(self.value(logits));
        if b != targets.len() {
            return Err(dim_err(format!("{b} logit rows but {} targets", targets.len())));
        }
        if c < 2 {
            return Err(dim_err("cross entropy needs at least two classes"));
        }
        let (loss, probs) = cross_entropy_raw(self.value(logits).data(), c, targets)?;
        let ng = self.needs(logits);
        Ok(self.push(mat(1, 1, vec![loss]), Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, ng))
    }

    /// Replays the tape backwards from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(dim_err(format!("backward from non-scalar {:?}", self.value(loss).shape())));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut params: HashMap<String, Vec<f64>> = HashMap::new();
        if !self.needs(loss) {
            return Ok(Grads { nodes: grads, params });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Ok(Grads { nodes: grads, params })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut HashMap<String, Vec<f64>>,
    ) {
        let (rows, cols) = dims(&node.value);
        let mut acc = |v: Var, len: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(name) => {
                let slot = params.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                for (s, v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
            }
            Op::Embed { name, ids, table_len } => {
                let slot = params.entry(name.clone()).or_insert_with(|| vec![0.0; *table_len]);
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..cols {
                        slot[id * cols + j] += g[r * cols + j];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.value(*a));
                let n = cols;
                let bv = self.value(*b).data();
                acc(*a, m * k, &mut |s| gemm_bt_acc(g, bv, s, m, n, k));
                let av = self.value(*a).data();
                acc(*b, k * n, &mut |s| gemm_at_acc(av, g, s, m, k, n));
            }
            Op::MatMulBT(a, b) => {
                // C = A·Bᵀ with A[m×k], B[n×k]: dA = dC·B, dB = dCᵀ·A
                let (m, k) = dims(self.value(*a));
                let n = cols;
                let bv = self.value(*b).data();
                acc(*a, m * k, &mut |s| gemm_acc(g, bv, s, m, n, k));
                let av = self.value(*a).data();
                acc(*b, n * k, &mut |s| gemm_at_acc(g, av, s, m, n, k));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, g.len(), &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.len(), &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, g.len(), &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).data();
                acc(*a, g.len(), &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                });
                let av = self.value(*a).data();
                acc(*b, g.len(), &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                });
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.len(), &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*bias, cols, &mut |s| {
                    for row in g.chunks(cols) {
                        for (o, v) in s.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                });
            }
            Op::AddConst(a) => {
                acc(*a, g.len(), &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Scale(a, k) => {
                acc(*a, g.len(), &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += k * g));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, g.len(), &mut |s| {
                    for i in 0..s.len() {
                        if x[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                acc(*a, g.len(), &mut |s| {
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..cols {
                            s[i * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gm = self.value(*gamma).data();
                let d = cols as f64;
                acc(*x, g.len(), &mut |s| {
                    for i in 0..rows {
                        let gr = &g[i * cols..(i + 1) * cols];
                        let xh = &xhat[i * cols..(i + 1) * cols];
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xh = 0.0;
                        for j in 0..cols {
                            let dy = gr[j] * gm[j];
                            sum_dy += dy;
                            sum_dy_xh += dy * xh[j];
                        }
                        for j in 0..cols {
                            let dy = gr[j] * gm[j];
                            s[i * cols + j] += inv_std[i] * (dy - sum_dy / d - xh[j] * sum_dy_xh / d);
                        }
                    }
                });
                acc(*gamma, cols, &mut |s| {
                    for i in 0..rows {
                        for j in 0..cols {
                            s[j] += g[i * cols + j] * xhat[i * cols + j];
                        }
                    }
                });
                acc(*beta, cols, &mut |s| {
                    for row in g.chunks(cols) {
                        for (o, v) in s.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SliceCols { a, start } => {
                let src_cols = self.value(*a).cols();
                acc(*a, rows * src_cols, &mut |s| {
                    for i in 0..rows {
                        for j in 0..cols {
                            s[i * src_cols + start + j] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    acc(p, rows * c, &mut |s| {
                        for i in 0..rows {
                            for j in 0..c {
                                s[i * c + j] += g[i * cols + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, len, &mut |s| {
                        for (o, v) in s.iter_mut().zip(&g[off..off + len]) {
                            *o += v;
                        }
                    });
                    off += len;
                }
            }
            Op::SelectRows { a, idx } => {
                let len = self.value(*a).len();
                acc(*a, len, &mut |s| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..cols {
                            s[i * cols + j] += g[r * cols + j];
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let (r, c) = dims(self.value(*a));
                acc(*a, r * c, &mut |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j] / r as f64;
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let c = self.value(*a).cols();
                let bv = self.value(*b).data();
                acc(*a, rows * c, &mut |s| {
                    for i in 0..rows {
                        for j in 0..c {
                            s[i * c + j] += g[i] * bv[i * c + j];
                        }
                    }
                });
                let av = self.value(*a).data();
                acc(*b, rows * c, &mut |s| {
                    for i in 0..rows {
                        for j in 0..c {
                            s[i * c + j] += g[i] * av[i * c + j];
                        }
                    }
                });
            }
            Op::MulCol(a, sc) => {
                let sv = self.value(*sc).data();
                acc(*a, g.len(), &mut |s| {
                    for i in 0..rows {
                        for j in 0..cols {
                            s[i * cols + j] += g[i * cols + j] * sv[i];
                        }
                    }
                });
                let av = self.value(*a).data();
                acc(*sc, rows, &mut |s| {
                    for i in 0..rows {
                        let mut t = 0.0;
                        for j in 0..cols {
                            t += g[i * cols + j] * av[i * cols + j];
                        }
                        s[i] += t;
                    }
                });
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                acc(*a, len, &mut |s| s.iter_mut().for_each(|s| *s += g[0]));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = self.value(*logits).cols();
                let b = targets.len() as f64;
                acc(*logits, probs.len(), &mut |s| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let ind = if j == t { 1.0 } else { 0.0 };
                            s[r * c + j] += g[0] * (probs[r * c + j] - ind) / b;
                        }
                    }
                });
            }
        }
    }
}
