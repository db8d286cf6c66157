//! Recorded-tape reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] is built fresh for every forward pass: leaves are copied in,
//! operations append nodes, and [`Tape::backward`] walks the record in
//! reverse filling per-node adjoints. Ops only ever reference earlier nodes,
//! so reverse insertion order is a valid reverse topological order.

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_acc, matmul_at_acc, matmul_bt, Tensor};

/// Probabilities inside `ln` are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a[m,k] · b[k,n]
    MatMul { a: Var, b: Var },
    /// a[m,k] · b[n,k]ᵀ
    MatMulBT { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// matrix[m,n] + row[n] broadcast over rows
    AddRow { a: Var, row: Var },
    /// scale * a + shift, elementwise
    Affine { a: Var, scale: f64 },
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    SumAll(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    NarrowCols { a: Var, start: usize, len: usize },
    SelectCols { a: Var, idx: Vec<usize> },
    ConcatCols { a: Var, b: Var },
    /// Elementwise Bernoulli log-likelihood x·ln p̂ + (1−x)·ln(1−p̂) with
    /// p̂ = clamp(p, PROB_EPS, 1−PROB_EPS).
    BernoulliLl { x: Var, p: Var },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
}

/// Append-only record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
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

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op) -> Var {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { data, shape, op });
        Var(self.nodes.len() - 1)
    }

    /// Copies a tensor onto the tape as a differentiable leaf.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf)
    }

    /// Raw leaf from parts; used for inputs and noise draws.
    pub fn leaf_from(&mut self, shape: &[usize], data: Vec<f64>) -> Var {
        self.push(data, shape.to_vec(), Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, v: f64) -> Var {
        self.push(vec![v], vec![1], Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar payload of a 1-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    /// Adjoint of `v`; only valid after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> &[f64] {
        assert!(
            !self.grads.is_empty(),
            "Tape::grad called before Tape::backward"
        );
        &self.grads[v.0]
    }

    /// Adds the adjoint of `v` into the tensor's gradient buffer.
    pub fn accumulate_grad_into(&self, v: Var, t: &mut Tensor) {
        t.accumulate_grad(self.grad(v));
    }

    fn rows_cols(&self, v: Var, context: &'static str) -> Result<(usize, usize)> {
        let s = &self.nodes[v.0].shape;
        if s.len() != 2 {
            return Err(Error::Dim {
                context,
                expected: 2,
                got: s.len(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dim {
                context,
                expected: self.nodes[a.0].data.len(),
                got: self.nodes[b.0].data.len(),
            });
        }
        Ok(())
    }

    // ── forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rows_cols(a, "matmul lhs")?;
        let (k2, n) = self.rows_cols(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dim {
                context: "matmul inner dim",
                expected: k,
                got: k2,
            });
        }
        let data = matmul(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        Ok(self.push(data, vec![m, n], Op::MatMul { a, b }))
    }

    /// `a · bᵀ` where `b` is stored row-major as [n, k].
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rows_cols(a, "matmul_bt lhs")?;
        let (n, k2) = self.rows_cols(b, "matmul_bt rhs")?;
        if k != k2 {
            return Err(Error::Dim {
                context: "matmul_bt inner dim",
                expected: k,
                got: k2,
            });
        }
        let data = matmul_bt(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        Ok(self.push(data, vec![m, n], Op::MatMulBT { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(data, shape, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(data, shape, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(data, shape, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.rows_cols(a, "add_row matrix")?;
        let rlen = self.nodes[row.0].data.len();
        if rlen != n {
            return Err(Error::Dim {
                context: "add_row bias",
                expected: n,
                got: rlen,
            });
        }
        let mut data = self.nodes[a.0].data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += self.nodes[row.0].data[j];
            }
        }
        Ok(self.push(data, vec![m, n], Op::AddRow { a, row }))
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .map(|x| scale * x + shift)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(data, shape, Op::Affine { a, scale })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(data, shape, op)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| 1.0 / (1.0 + (-x).exp()))
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), |x| {
            if x > 30.0 {
                x
            } else {
                x.exp().ln_1p()
            }
        })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp { a, lo, hi }, |x| x.clamp(lo, hi))
    }

    /// Sum of every element, as a scalar node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![s], vec![1], Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len() as f64;
        let s = self.sum_all(a);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Row-wise softmax over the last dimension of a 2D node.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.rows_cols(a, "softmax_rows")?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.nodes[a.0].data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                data[i * n + j] = e;
                z += e;
            }
            for j in 0..n {
                data[i * n + j] /= z;
            }
        }
        Ok(self.push(data, vec![m, n], Op::SoftmaxRows(a)))
    }

    /// Row-wise log-softmax over the last dimension of a 2D node.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.rows_cols(a, "log_softmax_rows")?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.nodes[a.0].data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln() + mx;
            for j in 0..n {
                data[i * n + j] = row[j] - lse;
            }
        }
        Ok(self.push(data, vec![m, n], Op::LogSoftmaxRows(a)))
    }

    /// Column slice `[.., start..start+len]` of a 2D node.
    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.rows_cols(a, "narrow_cols")?;
        if start + len > n {
            return Err(Error::Dim {
                context: "narrow_cols range",
                expected: n,
                got: start + len,
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&self.nodes[a.0].data[i * n + start..i * n + start + len]);
        }
        Ok(self.push(data, vec![m, len], Op::NarrowCols { a, start, len }))
    }

    /// Arbitrary column selection of a 2D node.
    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.rows_cols(a, "select_cols")?;
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::Dim {
                context: "select_cols index",
                expected: n,
                got: bad,
            });
        }
        let mut data = Vec::with_capacity(m * idx.len());
        for i in 0..m {
            for &j in idx {
                data.push(self.nodes[a.0].data[i * n + j]);
            }
        }
        Ok(self.push(
            data,
            vec![m, idx.len()],
            Op::SelectCols {
                a,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Horizontal concatenation of two 2D nodes with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n1) = self.rows_cols(a, "concat_cols lhs")?;
        let (m2, n2) = self.rows_cols(b, "concat_cols rhs")?;
        if m != m2 {
            return Err(Error::Dim {
                context: "concat_cols rows",
                expected: m,
                got: m2,
            });
        }
        let mut data = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            data.extend_from_slice(&self.nodes[a.0].data[i * n1..(i + 1) * n1]);
            data.extend_from_slice(&self.nodes[b.0].data[i * n2..(i + 1) * n2]);
        }
        Ok(self.push(data, vec![m, n1 + n2], Op::ConcatCols { a, b }))
    }

    /// Elementwise Bernoulli log-likelihood of targets `x` under means `p`,
    /// with `p` clamped away from {0, 1}.
    pub fn bernoulli_ll(&mut self, x: Var, p: Var) -> Result<Var> {
        self.same_shape(x, p, "bernoulli_ll")?;
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .zip(&self.nodes[p.0].data)
            .map(|(&xi, &pi)| {
                let ph = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
                xi * ph.ln() + (1.0 - xi) * (1.0 - ph).ln()
            })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(data, shape, Op::BernoulliLl { x, p }))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Each call propagates fresh adjoints
    /// and adds them into the tape's gradient buffers, so repeated calls
    /// accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut pass: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        pass[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    // dA += dC · Bᵀ ; dB += Aᵀ · dC
                    let da = matmul_bt(&pass[i], &self.nodes[b.0].data, m, n, k);
                    add_into(&mut pass[a.0], &da);
                    let (gc, gb) = split_two(&mut pass, i, b.0);
                    matmul_at_acc(gb, &self.nodes[a.0].data, gc, m, k, n);
                }
                Op::MatMulBT { a, b } => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[0];
                    // C = A·Bᵀ: dA += dC · B ; dB += dCᵀ · A
                    {
                        let (gc, ga) = split_two(&mut pass, i, a.0);
                        matmul_acc(ga, gc, &self.nodes[b.0].data, m, n, k);
                    }
                    {
                        let (gc, gb) = split_two(&mut pass, i, b.0);
                        matmul_at_acc(gb, gc, &self.nodes[a.0].data, m, n, k);
                    }
                }
                Op::Add(a, b) => {
                    let g = std::mem::take(&mut pass[i]);
                    add_into(&mut pass[a.0], &g);
                    add_into(&mut pass[b.0], &g);
                    pass[i] = g;
                }
                Op::Sub(a, b) => {
                    let g = std::mem::take(&mut pass[i]);
                    add_into(&mut pass[a.0], &g);
                    sub_into(&mut pass[b.0], &g);
                    pass[i] = g;
                }
                Op::Mul(a, b) => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        pass[a.0][j] += gj * self.nodes[b.0].data[j];
                        pass[b.0][j] += gj * self.nodes[a.0].data[j];
                    }
                    pass[i] = g;
                }
                Op::AddRow { a, row } => {
                    let g = std::mem::take(&mut pass[i]);
                    add_into(&mut pass[a.0], &g);
                    let n = self.nodes[row.0].data.len();
                    for (j, gj) in g.iter().enumerate() {
                        pass[row.0][j % n] += gj;
                    }
                    pass[i] = g;
                }
                Op::Affine { a, scale } => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        pass[a.0][j] += gj * scale;
                    }
                    pass[i] = g;
                }
                Op::Exp(a) => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        pass[a.0][j] += gj * self.nodes[i].data[j];
                    }
                    pass[i] = g;
                }
                Op::Ln(a) => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        pass[a.0][j] += gj / self.nodes[a.0].data[j];
                    }
                    pass[i] = g;
                }
                Op::Tanh(a) => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        let t = self.nodes[i].data[j];
                        pass[a.0][j] += gj * (1.0 - t * t);
                    }
                    pass[i] = g;
                }
                Op::Relu(a) => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        if self.nodes[a.0].data[j] > 0.0 {
                            pass[a.0][j] += gj;
                        }
                    }
                    pass[i] = g;
                }
                Op::Sigmoid(a) => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        let s = self.nodes[i].data[j];
                        pass[a.0][j] += gj * s * (1.0 - s);
                    }
                    pass[i] = g;
                }
                Op::Softplus(a) => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        let x = self.nodes[a.0].data[j];
                        pass[a.0][j] += gj / (1.0 + (-x).exp());
                    }
                    pass[i] = g;
                }
                Op::Abs(a) => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        let x = self.nodes[a.0].data[j];
                        pass[a.0][j] +=
                            gj * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
                    }
                    pass[i] = g;
                }
                Op::Clamp { a, lo, hi } => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        let x = self.nodes[a.0].data[j];
                        if x > lo && x < hi {
                            pass[a.0][j] += gj;
                        }
                    }
                    pass[i] = g;
                }
                Op::SumAll(a) => {
                    let g = pass[i][0];
                    pass[a.0].iter_mut().for_each(|v| *v += g);
                }
                Op::SoftmaxRows(a) => {
                    // ds_j = s_j (g_j − Σ_k g_k s_k), per row
                    let (m, n) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let g = std::mem::take(&mut pass[i]);
                    for r in 0..m {
                        let s = &self.nodes[i].data[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = gr.iter().zip(s).map(|(x, y)| x * y).sum();
                        for j in 0..n {
                            pass[a.0][r * n + j] += s[j] * (gr[j] - dot);
                        }
                    }
                    pass[i] = g;
                }
                Op::LogSoftmaxRows(a) => {
                    // dl_j = g_j − softmax_j Σ_k g_k, per row
                    let (m, n) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let g = std::mem::take(&mut pass[i]);
                    for r in 0..m {
                        let ls = &self.nodes[i].data[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..n {
                            pass[a.0][r * n + j] += gr[j] - ls[j].exp() * gsum;
                        }
                    }
                    pass[i] = g;
                }
                Op::NarrowCols { a, start, len } => {
                    let n = self.nodes[a.0].shape[1];
                    let m = self.nodes[a.0].shape[0];
                    let g = std::mem::take(&mut pass[i]);
                    for r in 0..m {
                        for j in 0..len {
                            pass[a.0][r * n + start + j] += g[r * len + j];
                        }
                    }
                    pass[i] = g;
                }
                Op::SelectCols { a, ref idx } => {
                    let n = self.nodes[a.0].shape[1];
                    let m = self.nodes[a.0].shape[0];
                    let g = std::mem::take(&mut pass[i]);
                    for r in 0..m {
                        for (j, &col) in idx.iter().enumerate() {
                            pass[a.0][r * n + col] += g[r * idx.len() + j];
                        }
                    }
                    pass[i] = g;
                }
                Op::ConcatCols { a, b } => {
                    let n1 = self.nodes[a.0].shape[1];
                    let n2 = self.nodes[b.0].shape[1];
                    let m = self.nodes[a.0].shape[0];
                    let g = std::mem::take(&mut pass[i]);
                    let w = n1 + n2;
                    for r in 0..m {
                        for j in 0..n1 {
                            pass[a.0][r * n1 + j] += g[r * w + j];
                        }
                        for j in 0..n2 {
                            pass[b.0][r * n2 + j] += g[r * w + n1 + j];
                        }
                    }
                    pass[i] = g;
                }
                Op::BernoulliLl { x, p } => {
                    let g = std::mem::take(&mut pass[i]);
                    for (j, gj) in g.iter().enumerate() {
                        let xj = self.nodes[x.0].data[j];
                        let pj = self.nodes[p.0].data[j];
                        let ph = pj.clamp(PROB_EPS, 1.0 - PROB_EPS);
                        // ∂/∂x = ln p̂ − ln(1−p̂); ∂/∂p = x/p̂ − (1−x)/(1−p̂)
                        // inside the clamp, zero where it binds.
                        pass[x.0][j] += gj * (ph.ln() - (1.0 - ph).ln());
                        if pj > PROB_EPS && pj < 1.0 - PROB_EPS {
                            pass[p.0][j] += gj * (xj / ph - (1.0 - xj) / (1.0 - ph));
                        }
                    }
                    pass[i] = g;
                }
            }
        }

        if self.grads.is_empty() {
            self.grads = pass;
        } else {
            for (total, fresh) in self.grads.iter_mut().zip(&pass) {
                add_into(total, fresh);
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sub_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d -= s;
    }
}

/// Disjoint mutable views of grads[i] and grads[j] (i != j).
fn split_two(grads: &mut [Vec<f64>], i: usize, j: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert_ne!(i, j);
    if i < j {
        let (lo, hi) = grads.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = grads.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        // loss = Σ w_i², grad = 2 w_i
        let w = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut tape = Tape::new();
        let wv = tape.leaf(&w);
        let sq = tape.mul(wv, wv).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(wv), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let wv = tape.leaf(&w);
        assert!(tape.backward(wv).is_err());
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let used = tape.leaf(&w);
        let unused = tape.leaf(&w);
        let loss = tape.sum_all(used);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused), &[0.0, 0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let wv = tape.leaf(&w);
        let loss = tape.sum_all(wv);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(wv), &[2.0, 2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let s = tape.softmax_rows(xv).unwrap();
        for r in 0..2 {
            let row = &tape.value(s)[r * 3..(r + 1) * 3];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_and_narrow_round_trip() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap();
        let mut tape = Tape::new();
        let av = tape.leaf(&a);
        let bv = tape.leaf(&b);
        let cat = tape.concat_cols(av, bv).unwrap();
        assert_eq!(tape.value(cat), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.narrow_cols(cat, 0, 2).unwrap();
        assert_eq!(tape.value(back), a.data());
    }
}
