//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape index order is a
//! topological order and the graph is acyclic by construction. A graph is
//! built per forward pass and dropped afterwards; parameters live outside in
//! a [`ParamStore`] and their gradients are flushed into [`Gradients`].

use std::collections::HashMap;

use rand::Rng;

use crate::scalar::Scalar;

use super::kernels::{self, NormCache};
use super::params::{Gradients, ParamId, ParamStore};
use super::{NumericsError, Tensor};

/// Handle of a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Input,
    Param,
    ParamRows {
        id: ParamId,
        indices: Vec<usize>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<F>,
    },
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Scatter {
        x: Var,
        positions: Vec<usize>,
    },
    SumAll(Var),
    MeanRows(Var),
    SumCols(Var),
    Softmax(Var),
    BceWithLogits {
        z: Var,
        label: F,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// A differentiation tape over scalar type `F`.
#[derive(Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    param_vars: HashMap<ParamId, Var>,
    row_vars: Vec<Var>,
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: HashMap::new(),
            row_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input whose gradient is tracked and readable after `backward`.
    pub fn variable(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    /// Rows `indices` of a stored 2-D parameter as a leaf. Only the gathered
    /// rows are copied and their gradient stays sparse until
    /// [`Graph::accumulate_param_grads`] scatters it back.
    pub fn param_rows(&mut self, store: &ParamStore<F>, id: ParamId, indices: &[usize]) -> Var {
        let table = store.get(id);
        let d = table.cols();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < table.rows(), "row {i} out of {} rows", table.rows());
            out.extend_from_slice(table.row(i));
        }
        let v = self.push(
            Tensor::matrix(indices.len(), d, out),
            Op::ParamRows {
                id,
                indices: indices.to_vec(),
            },
            true,
        );
        self.row_vars.push(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul {:?} x {:?}", av.shape(), bv.shape());
        let out = kernels::matmul(av.data(), bv.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let out = kernels::transpose(av.data(), r, c);
        let rg = self.rg(a);
        self.push(Tensor::matrix(c, r, out), Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), out);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg)
    }

    /// Adds a length-`d` row vector to every row of an `n×d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(row));
        let d = av.cols();
        assert_eq!(bv.numel(), d, "add_row width mismatch");
        let mut out = av.data().to_vec();
        for chunk in out.chunks_mut(d) {
            for (o, &b) in chunk.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), out);
        let rg = self.rg(a) || self.rg(row);
        self.push(t, Op::AddRow(a, row), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), out);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let av = self.value(a);
        let out = av.data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(av.shape().to_vec(), out);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// Row-wise mean-variance normalization with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let (out, cache) = kernels::layer_norm(
            xv.data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            r,
            c,
            eps,
        );
        let t = Tensor::new(xv.shape().to_vec(), out);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
            rg,
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| kernels::gelu(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), out);
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Inverted dropout. The sampled mask is stored on the tape so the
    /// backward pass is exact. `p == 0` returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = F::of(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<F>) -> Var {
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.numel());
        let out = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), out);
        let rg = self.rg(x);
        self.push(t, Op::Dropout { x, mask }, rg)
    }

    /// Gathers rows of a 2-D table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        let d = tv.cols();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < tv.rows(), "embedding index {i} out of {} rows", tv.rows());
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::matrix(indices.len(), d, out);
        let rg = self.rg(table);
        self.push(
            t,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![F::zero(); rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out[i * total + off..i * total + off + w].copy_from_slice(pv.row(i));
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            out.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        assert!(start + len <= c);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(r, len, out), Op::SliceCols { x, start }, rg)
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(xv.row(i));
        }
        let rg = self.rg(x);
        self.push(
            Tensor::matrix(rows.len(), c, out),
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        )
    }

    /// Places a `k×k` matrix into a zero `n×n` matrix at rows and columns
    /// `positions`. Positions must be strictly increasing and below `n`.
    pub fn scatter_square(&mut self, x: Var, positions: &[usize], n: usize) -> Result<Var, NumericsError> {
        let out = scatter_square(self.value(x).data(), positions, n)?;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::matrix(n, n, out),
            Op::Scatter {
                x,
                positions: positions.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<F>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Column-wise mean over rows, giving a `1×d` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![F::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        let inv = F::one() / F::from_usize(r).expect("row count");
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(x);
        self.push(Tensor::matrix(1, c, out), Op::MeanRows(x), rg)
    }

    /// Row-wise sum over columns, giving an `n×1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let r = xv.rows();
        let out = (0..r).map(|i| xv.row(i).iter().copied().sum::<F>()).collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(r, 1, out), Op::SumCols(x), rg)
    }

    /// Row-wise softmax; `allowed` entries set to false come out as exact zeros.
    pub fn softmax_rows(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if let Some(m) = allowed {
            assert_eq!(m.len(), r * c, "mask shape mismatch");
        }
        let out = kernels::softmax_rows(xv.data(), r, c, allowed)?;
        let t = Tensor::new(xv.shape().to_vec(), out);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// Binary cross-entropy of a single logit against a 0/1 label.
    pub fn bce_with_logits(&mut self, z: Var, label: F) -> Var {
        let zv = self.value(z).item();
        let loss = kernels::bce_with_logits(zv, label);
        let rg = self.rg(z);
        self.push(Tensor::scalar(loss), Op::BceWithLogits { z, label }, rg)
    }

    /// Reverse sweep from a scalar `loss`. Gradients from any earlier sweep
    /// are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        self.backward_with_seed(loss, F::one())
    }

    /// Like [`Graph::backward`] with `d(out)/d(loss) = seed`, e.g. `1/batch`.
    pub fn backward_with_seed(&mut self, loss: Var, seed: F) -> Result<(), NumericsError> {
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::NonScalarLoss(shape));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g);
            if matches!(self.nodes[i].op, Op::Input | Op::Param | Op::ParamRows { .. }) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }

    /// Adds `scale ×` every parameter gradient from the last sweep into `out`.
    pub fn accumulate_param_grads(&self, out: &mut Gradients<F>, scale: F) {
        for (&id, &v) in &self.param_vars {
            if let Some(g) = self.grad(v) {
                out.add_to(id, g, scale);
            }
        }
        for &v in &self.row_vars {
            let (Op::ParamRows { id, indices }, Some(g)) = (&self.nodes[v.0].op, self.grad(v)) else {
                continue;
            };
            let d = self.value(v).cols();
            let buf = out.get_mut(*id);
            for (r, &idx) in indices.iter().enumerate() {
                for (b, &x) in buf[idx * d..(idx + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                    *b += scale * x;
                }
            }
        }
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<F>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    fn acc_slice(&mut self, v: Var, g: &[F], scale: F) {
        if let Some(buf) = self.acc(v) {
            for (b, &x) in buf.iter_mut().zip(g) {
                *b += scale * x;
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &[F]) {
        // Parents always precede `i`, so splitting borrows the earlier nodes.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Input);
        match &op {
            Op::Input | Op::Param | Op::ParamRows { .. } => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.value(a).rows(), self.value(a).cols());
                let n = self.value(b).cols();
                if self.rg(a) {
                    let bv = self.nodes[b.0].value.data().to_vec();
                    if let Some(buf) = self.acc(a) {
                        kernels::matmul_nt_acc(g, &bv, m, k, n, buf);
                    }
                }
                if self.rg(b) {
                    let av = self.nodes[a.0].value.data().to_vec();
                    if let Some(buf) = self.acc(b) {
                        kernels::matmul_tn_acc(&av, g, m, k, n, buf);
                    }
                }
            }
            Op::Transpose(a) => {
                let a = *a;
                let (r, c) = (self.value(a).rows(), self.value(a).cols());
                // g is c×r
                let gt = kernels::transpose(g, c, r);
                self.acc_slice(a, &gt, F::one());
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.acc_slice(a, g, F::one());
                self.acc_slice(b, g, F::one());
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                self.acc_slice(a, g, F::one());
                let d = self.value(a).cols();
                if let Some(buf) = self.acc(row) {
                    for chunk in g.chunks(d) {
                        for (b, &x) in buf.iter_mut().zip(chunk) {
                            *b += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let ga: Vec<F> = g.iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
                    self.acc_slice(a, &ga, F::one());
                }
                if self.rg(b) {
                    let gb: Vec<F> = g.iter().zip(self.value(a).data()).map(|(&x, &y)| x * y).collect();
                    self.acc_slice(b, &gb, F::one());
                }
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                self.acc_slice(a, g, c);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let cols = self.value(x).cols();
                let rows = self.value(x).rows();
                let gam = self.value(gamma).data().to_vec();
                if self.rg(gamma) {
                    let mut gg = vec![F::zero(); cols];
                    for (idx, (&gv, &h)) in g.iter().zip(&cache.normalized).enumerate() {
                        gg[idx % cols] += gv * h;
                    }
                    self.acc_slice(gamma, &gg, F::one());
                }
                if self.rg(beta) {
                    let mut gb = vec![F::zero(); cols];
                    for (idx, &gv) in g.iter().enumerate() {
                        gb[idx % cols] += gv;
                    }
                    self.acc_slice(beta, &gb, F::one());
                }
                if self.rg(x) {
                    let n = F::from_usize(cols).expect("cols");
                    let mut gx = vec![F::zero(); rows * cols];
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let hr = &cache.normalized[r * cols..(r + 1) * cols];
                        let mut sum_d = F::zero();
                        let mut sum_dh = F::zero();
                        for j in 0..cols {
                            let d = gr[j] * gam[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        let inv = cache.inv_std[r] / n;
                        for j in 0..cols {
                            let d = gr[j] * gam[j];
                            gx[r * cols + j] = inv * (n * d - sum_d - hr[j] * sum_dh);
                        }
                    }
                    self.acc_slice(x, &gx, F::one());
                }
            }
            Op::Gelu(x) => {
                let x = *x;
                let gx: Vec<F> = g
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&gv, &xv)| gv * kernels::gelu_grad(xv))
                    .collect();
                self.acc_slice(x, &gx, F::one());
            }
            Op::Dropout { x, mask } => {
                let gx: Vec<F> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                self.acc_slice(*x, &gx, F::one());
            }
            Op::Embedding { table, indices } => {
                let table = *table;
                let d = self.value(table).cols();
                if let Some(buf) = self.acc(table) {
                    for (r, &idx) in indices.iter().enumerate() {
                        for (b, &x) in buf[idx * d..(idx + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *b += x;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = self.value(Var(i)).cols();
                let rows = self.value(Var(i)).rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(buf) = self.acc(p) {
                        for r in 0..rows {
                            for (b, &x) in buf[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&g[r * total + off..r * total + off + w])
                            {
                                *b += x;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.acc_slice(p, &g[off..off + n], F::one());
                    off += n;
                }
            }
            Op::SliceCols { x, start } => {
                let (x, start) = (*x, *start);
                let c = self.value(x).cols();
                let len = self.value(Var(i)).cols();
                if let Some(buf) = self.acc(x) {
                    for (r, chunk) in g.chunks(len).enumerate() {
                        for (b, &v) in buf[r * c + start..r * c + start + len].iter_mut().zip(chunk) {
                            *b += v;
                        }
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let x = *x;
                let c = self.value(x).cols();
                if let Some(buf) = self.acc(x) {
                    for (r, &src) in rows.iter().enumerate() {
                        for (b, &v) in buf[src * c..(src + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                            *b += v;
                        }
                    }
                }
            }
            Op::Scatter { x, positions } => {
                let x = *x;
                let k = positions.len();
                let n = self.value(Var(i)).cols();
                if let Some(buf) = self.acc(x) {
                    for (a, &pa) in positions.iter().enumerate() {
                        for (b, &pb) in positions.iter().enumerate() {
                            buf[a * k + b] += g[pa * n + pb];
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let x = *x;
                let g0 = g[0];
                if let Some(buf) = self.acc(x) {
                    buf.iter_mut().for_each(|b| *b += g0);
                }
            }
            Op::MeanRows(x) => {
                let x = *x;
                let (r, c) = (self.value(x).rows(), self.value(x).cols());
                let inv = F::one() / F::from_usize(r).expect("rows");
                if let Some(buf) = self.acc(x) {
                    for chunk in buf.chunks_mut(c) {
                        for (b, &v) in chunk.iter_mut().zip(g) {
                            *b += v * inv;
                        }
                    }
                }
            }
            Op::SumCols(x) => {
                let x = *x;
                let c = self.value(x).cols();
                if let Some(buf) = self.acc(x) {
                    for (r, chunk) in buf.chunks_mut(c).enumerate() {
                        chunk.iter_mut().for_each(|b| *b += g[r]);
                    }
                }
            }
            Op::Softmax(x) => {
                let x = *x;
                let (r, c) = (self.value(x).rows(), self.value(x).cols());
                let y = self.nodes[i].value.data().to_vec();
                let mut gx = vec![F::zero(); r * c];
                for row in 0..r {
                    let yr = &y[row * c..(row + 1) * c];
                    let gr = &g[row * c..(row + 1) * c];
                    let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gx[row * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc_slice(x, &gx, F::one());
            }
            Op::BceWithLogits { z, label } => {
                let (z, label) = (*z, *label);
                let zv = self.value(z).item();
                let d = (kernels::sigmoid(zv) - label) * g[0];
                self.acc_slice(z, &[d], F::one());
            }
        }
        self.nodes[i].op = op;
    }
}

/// Dense scatter of a row-major `k×k` block into an `n×n` zero matrix.
pub fn scatter_square<F: Scalar>(block: &[F], positions: &[usize], n: usize) -> Result<Vec<F>, NumericsError> {
    let k = positions.len();
    if block.len() != k * k {
        return Err(NumericsError::ShapeMismatch {
            expected: vec![k, k],
            got: vec![block.len()],
        });
    }
    for (idx, &p) in positions.iter().enumerate() {
        if p >= n {
            return Err(NumericsError::InvalidPositions(format!("position {p} out of range for n = {n}")));
        }
        if idx > 0 && positions[idx - 1] >= p {
            return Err(NumericsError::InvalidPositions(format!(
                "positions must be strictly increasing, got {} then {p}",
                positions[idx - 1]
            )));
        }
    }
    let mut out = vec![F::zero(); n * n];
    for (a, &pa) in positions.iter().enumerate() {
        for (b, &pb) in positions.iter().enumerate() {
            out[pa * n + pb] = block[a * k + b];
        }
    }
    Ok(out)
}
