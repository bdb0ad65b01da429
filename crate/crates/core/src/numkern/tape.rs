//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Every operation appends a node holding its value and the indices of its
//! inputs. Inputs always precede outputs on the tape, so the recorded graph
//! is acyclic by construction and the backward pass is a single reverse
//! sweep.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::{log_sum_exp_rows, softmax_rows, DenseMatrix, LinearOperator, RowMask};

/// Handle to a value recorded on a [`Tape`].
///
/// Handles are plain indices; using a handle with a tape other than the one
/// that produced it is a logic error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs for the fused neighbor-attention operation.
///
/// For each output row `i`, the scores are
/// `e_ij = leaky(a_selfᵀ h[centers[i]] + a_nbrᵀ h[j])` over `j ∈ neighbors[i]`,
/// the weights are their softmax, and the output is
/// `elu(Σ_j keep_ij · α_ij · h[j])`.
#[derive(Clone, Debug)]
pub struct AttentionInputs {
    pub centers: Arc<Vec<usize>>,
    pub neighbors: Arc<Vec<Vec<usize>>>,
    /// Dropout keep-multipliers per (row, neighbor slot); `None` in eval mode.
    pub keep: Option<Vec<Vec<f64>>>,
    pub slope: f64,
}

struct AttentionRecord {
    h: Var,
    a: Var,
    inputs: AttentionInputs,
    alpha: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    summed: DenseMatrix,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    LeftApply(Arc<dyn LinearOperator>, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Arc<DenseMatrix>),
    Hadamard(Var, Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Log(Var),
    StudentT(Var),
    SumAll(Var),
    MeanAll(Var),
    ConcatCols(Vec<Var>),
    VStack(Vec<Var>),
    Select(Var, usize, usize),
    ScalarMul(Var, Var),
    SoftmaxRows(Var, Arc<RowMask>),
    LogSumExpRows(Var, Arc<RowMask>),
    RowL2Normalize(Var, Vec<f64>),
    RowSumNormalize(Var, Vec<f64>),
    SqDist(Var, Var),
    NeighborAttention(Box<AttentionRecord>),
}

struct Node {
    value: DenseMatrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    a.mismatch(op, b)
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

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (trainable or constant; gradients are produced for both).
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_transpose(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_transpose(self.value(b))?;
        Ok(self.push(value, Op::MatMulTransB(a, b)))
    }

    /// `L · x` for a constant operator `L`.
    pub fn left_apply(&mut self, op: Arc<dyn LinearOperator>, x: Var) -> Result<Var> {
        let value = op.apply(self.value(x))?;
        Ok(self.push(value, Op::LeftApply(op, x)))
    }

    /// Adds a `1×c` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_row", xv, bv));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scale(factor);
        self.push(value, Op::Scale(x, factor))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddConst(x))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, x: Var, k: Arc<DenseMatrix>) -> Result<Var> {
        let value = self.value(x).zip_map(&k, |a, b| a * b)?;
        Ok(self.push(value, Op::MulConst(x, k)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(elu);
        self.push(value, Op::Elu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| leaky_relu(v, slope));
        self.push(value, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.values().iter().any(|&v| v <= 0.0) {
            return Err(Error::Contract("log of a non-positive entry".into()));
        }
        let value = xv.map(f64::ln);
        Ok(self.push(value, Op::Log(x)))
    }

    /// Elementwise `1 / (1 + x)`, the Student-t kernel with one degree of freedom.
    pub fn student_t(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 / (1.0 + v));
        self.push(value, Op::StudentT(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = DenseMatrix::filled(1, 1, self.value(x).sum());
        self.push(value, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = (xv.rows() * xv.cols()).max(1) as f64;
        let value = DenseMatrix::filled(1, 1, xv.sum() / n);
        self.push(value, Op::MeanAll(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::EmptyInput("concat_cols with no inputs".into()))?;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::EmptyInput("vstack with no inputs".into()))?;
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("vstack", self.value(parts[0]), pv));
            }
            values.extend_from_slice(pv.values());
            rows += pv.rows();
        }
        let value = DenseMatrix::from_vec(rows, cols, values)?;
        Ok(self.push(value, Op::VStack(parts.to_vec())))
    }

    /// Extracts entry `(r, c)` as a 1×1 node.
    pub fn select(&mut self, x: Var, r: usize, c: usize) -> Var {
        let value = DenseMatrix::filled(1, 1, self.value(x)[(r, c)]);
        self.push(value, Op::Select(x, r, c))
    }

    /// Multiplies `x` by the 1×1 node `s`.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(shape_err("scalar_mul", sv, self.value(x)));
        }
        let value = self.value(x).scale(sv[(0, 0)]);
        Ok(self.push(value, Op::ScalarMul(s, x)))
    }

    pub fn softmax_rows(&mut self, x: Var, mask: Arc<RowMask>) -> Result<Var> {
        let value = softmax_rows(self.value(x), &mask)?;
        Ok(self.push(value, Op::SoftmaxRows(x, mask)))
    }

    /// Masked log-sum-exp of each row, as an `n×1` column.
    pub fn log_sum_exp_rows(&mut self, x: Var, mask: Arc<RowMask>) -> Result<Var> {
        let lse = log_sum_exp_rows(self.value(x), &mask)?;
        let value = DenseMatrix::from_vec(lse.len(), 1, lse)?;
        Ok(self.push(value, Op::LogSumExpRows(x, mask)))
    }

    /// Scales each row to unit Euclidean norm. Zero rows are rejected.
    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut norms = Vec::with_capacity(xv.rows());
        let mut value = xv.clone();
        for r in 0..xv.rows() {
            let norm = super::dot(xv.row(r), xv.row(r)).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::DegenerateEmbedding(format!("row {r} has norm {norm}")));
            }
            value.row_mut(r).iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        Ok(self.push(value, Op::RowL2Normalize(x, norms)))
    }

    /// Divides each row by its sum. Rows must have positive sums.
    pub fn row_sum_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut sums = Vec::with_capacity(xv.rows());
        let mut value = xv.clone();
        for r in 0..xv.rows() {
            let s: f64 = xv.row(r).iter().sum();
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::DegenerateRow { row: r });
            }
            value.row_mut(r).iter_mut().for_each(|v| *v /= s);
            sums.push(s);
        }
        Ok(self.push(value, Op::RowSumNormalize(x, sums)))
    }

    /// `D[i, j] = ‖z_i − c_j‖²` between the rows of `z` and `c`.
    pub fn sq_dist(&mut self, z: Var, c: Var) -> Result<Var> {
        let (zv, cv) = (self.value(z), self.value(c));
        if zv.cols() != cv.cols() {
            return Err(shape_err("sq_dist", zv, cv));
        }
        let value = DenseMatrix::from_fn(zv.rows(), cv.rows(), |i, j| {
            zv.row(i)
                .iter()
                .zip(cv.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        });
        Ok(self.push(value, Op::SqDist(z, c)))
    }

    /// Fused masked-softmax neighbor attention; see [`AttentionInputs`].
    ///
    /// `a` is a `1×2d` row whose first half scores the center row and whose
    /// second half scores the neighbor row.
    pub fn neighbor_attention(&mut self, h: Var, a: Var, inputs: AttentionInputs) -> Result<Var> {
        let (hv, av) = (self.value(h), self.value(a));
        let d = hv.cols();
        if av.shape() != (1, 2 * d) {
            return Err(shape_err("neighbor_attention", hv, av));
        }
        let n = inputs.centers.len();
        if inputs.neighbors.len() != n {
            return Err(Error::Contract(format!(
                "{} centers but {} neighbor lists",
                n,
                inputs.neighbors.len()
            )));
        }
        let (a_self, a_nbr) = av.row(0).split_at(d);
        let mut alpha = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut summed = DenseMatrix::zeros(n, d);
        for i in 0..n {
            let nbrs = &inputs.neighbors[i];
            if nbrs.is_empty() {
                return Err(Error::DegenerateRow { row: i });
            }
            let center = inputs.centers[i];
            if center >= hv.rows() || nbrs.iter().any(|&j| j >= hv.rows()) {
                return Err(Error::Contract(format!(
                    "attention row {i} indexes outside {} feature rows",
                    hv.rows()
                )));
            }
            let self_score = super::dot(a_self, hv.row(center));
            let raw: Vec<f64> = nbrs
                .iter()
                .map(|&j| self_score + super::dot(a_nbr, hv.row(j)))
                .collect();
            let scores: Vec<f64> = raw.iter().map(|&v| leaky_relu(v, inputs.slope)).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
            let out_row = summed.row_mut(i);
            for (slot, (&j, &w)) in nbrs.iter().zip(&weights).enumerate() {
                let k = inputs.keep.as_ref().map_or(1.0, |keep| keep[i][slot]);
                if k == 0.0 {
                    continue;
                }
                for (o, &v) in out_row.iter_mut().zip(hv.row(j)) {
                    *o += k * w * v;
                }
            }
            alpha.push(weights);
            pre.push(raw);
        }
        let value = summed.map(elu);
        let record = AttentionRecord {
            h,
            a,
            inputs,
            alpha,
            pre,
            summed,
        };
        Ok(self.push(value, Op::NeighborAttention(Box::new(record))))
    }

    /// Attention weights recorded by a [`Tape::neighbor_attention`] node.
    pub fn attention_weights(&self, v: Var) -> Option<&[Vec<f64>]> {
        match &self.nodes[v.0].op {
            Op::NeighborAttention(rec) => Some(&rec.alpha),
            _ => None,
        }
    }

    /// Propagates gradients of the 1×1 node `output` back to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {}x{}",
                out_shape.0, out_shape.1
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &DenseMatrix,
        grads: &mut [Option<DenseMatrix>],
    ) -> Result<()> {
        let mut acc = |v: Var, delta: DenseMatrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_transpose(self.value(*b))?);
                acc(*b, self.value(*a).transpose_matmul(g)?);
            }
            Op::MatMulTransB(a, b) => {
                acc(*a, g.matmul(self.value(*b))?);
                acc(*b, g.transpose_matmul(self.value(*a))?);
            }
            Op::LeftApply(op, x) => acc(*x, op.apply_transpose(g)?),
            Op::AddRow(x, b) => {
                let mut gb = DenseMatrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*x, g.clone());
                acc(*b, gb);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Scale(x, f) => acc(*x, g.scale(*f)),
            Op::AddConst(x) => acc(*x, g.clone()),
            Op::MulConst(x, k) => acc(*x, g.zip_map(k, |a, b| a * b)?),
            Op::Hadamard(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gv, v| gv * v)?);
                acc(*b, g.zip_map(self.value(*a), |gv, v| gv * v)?);
            }
            Op::Elu(x) => {
                let xv = self.value(*x);
                let d = DenseMatrix::from_fn(xv.rows(), xv.cols(), |r, c| {
                    g[(r, c)] * elu_grad(xv[(r, c)], y[(r, c)])
                });
                acc(*x, d);
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                acc(*x, g.zip_map(xv, |gv, v| if v > 0.0 { gv } else { gv * slope })?);
            }
            Op::Tanh(x) => acc(*x, g.zip_map(y, |gv, t| gv * (1.0 - t * t))?),
            Op::Log(x) => acc(*x, g.zip_map(self.value(*x), |gv, v| gv / v)?),
            Op::StudentT(x) => acc(*x, g.zip_map(y, |gv, q| -gv * q * q)?),
            Op::SumAll(x) => {
                let xv = self.value(*x);
                acc(*x, DenseMatrix::filled(xv.rows(), xv.cols(), g[(0, 0)]));
            }
            Op::MeanAll(x) => {
                let xv = self.value(*x);
                let n = (xv.rows() * xv.cols()).max(1) as f64;
                acc(*x, DenseMatrix::filled(xv.rows(), xv.cols(), g[(0, 0)] / n));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let d = DenseMatrix::from_fn(g.rows(), cols, |r, c| g[(r, offset + c)]);
                    acc(p, d);
                    offset += cols;
                }
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let d = DenseMatrix::from_fn(rows, g.cols(), |r, c| g[(offset + r, c)]);
                    acc(p, d);
                    offset += rows;
                }
            }
            Op::Select(x, r, c) => {
                let xv = self.value(*x);
                let mut d = DenseMatrix::zeros(xv.rows(), xv.cols());
                d[(*r, *c)] = g[(0, 0)];
                acc(*x, d);
            }
            Op::ScalarMul(s, x) => {
                let xv = self.value(*x);
                let gs: f64 = g.values().iter().zip(xv.values()).map(|(a, b)| a * b).sum();
                acc(*s, DenseMatrix::filled(1, 1, gs));
                acc(*x, g.scale(self.value(*s)[(0, 0)]));
            }
            Op::SoftmaxRows(x, mask) => {
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner: f64 = mask.columns(r, y.cols()).map(|c| y[(r, c)] * g[(r, c)]).sum();
                    for c in mask.columns(r, y.cols()) {
                        d[(r, c)] = y[(r, c)] * (g[(r, c)] - inner);
                    }
                }
                acc(*x, d);
            }
            Op::LogSumExpRows(x, mask) => {
                let probs = softmax_rows(self.value(*x), mask)?;
                let d = DenseMatrix::from_fn(probs.rows(), probs.cols(), |r, c| {
                    g[(r, 0)] * probs[(r, c)]
                });
                acc(*x, d);
            }
            Op::RowL2Normalize(x, norms) => {
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let proj = super::dot(y.row(r), g.row(r));
                    for c in 0..y.cols() {
                        d[(r, c)] = (g[(r, c)] - y[(r, c)] * proj) / norms[r];
                    }
                }
                acc(*x, d);
            }
            Op::RowSumNormalize(x, sums) => {
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = super::dot(y.row(r), g.row(r));
                    for c in 0..y.cols() {
                        d[(r, c)] = (g[(r, c)] - inner) / sums[r];
                    }
                }
                acc(*x, d);
            }
            Op::SqDist(z, c) => {
                let (zv, cv) = (self.value(*z), self.value(*c));
                let mut gz = DenseMatrix::zeros(zv.rows(), zv.cols());
                let mut gc = DenseMatrix::zeros(cv.rows(), cv.cols());
                for i in 0..zv.rows() {
                    for j in 0..cv.rows() {
                        let w = 2.0 * g[(i, j)];
                        for k in 0..zv.cols() {
                            let diff = zv[(i, k)] - cv[(j, k)];
                            gz[(i, k)] += w * diff;
                            gc[(j, k)] -= w * diff;
                        }
                    }
                }
                acc(*z, gz);
                acc(*c, gc);
            }
            Op::NeighborAttention(rec) => {
                let (gh, ga) = self.attention_backward(rec, g, y);
                acc(rec.h, gh);
                acc(rec.a, ga);
            }
        }
        Ok(())
    }

    fn attention_backward(
        &self,
        rec: &AttentionRecord,
        g: &DenseMatrix,
        y: &DenseMatrix,
    ) -> (DenseMatrix, DenseMatrix) {
        let hv = self.value(rec.h);
        let av = self.value(rec.a);
        let d = hv.cols();
        let (a_self, a_nbr) = av.row(0).split_at(d);
        let mut gh = DenseMatrix::zeros(hv.rows(), d);
        let mut ga = DenseMatrix::zeros(1, 2 * d);
        for i in 0..rec.inputs.centers.len() {
            let nbrs = &rec.inputs.neighbors[i];
            let center = rec.inputs.centers[i];
            let g_sum: Vec<f64> = (0..d)
                .map(|c| g[(i, c)] * elu_grad(rec.summed[(i, c)], y[(i, c)]))
                .collect();
            let keep = |slot: usize| rec.inputs.keep.as_ref().map_or(1.0, |k| k[i][slot]);
            // d(loss)/d(alpha_ij)
            let g_alpha: Vec<f64> = nbrs
                .iter()
                .enumerate()
                .map(|(slot, &j)| keep(slot) * super::dot(&g_sum, hv.row(j)))
                .collect();
            let weights = &rec.alpha[i];
            let inner: f64 = weights.iter().zip(&g_alpha).map(|(w, ga)| w * ga).sum();
            let mut g_self_score = 0.0;
            for (slot, &j) in nbrs.iter().enumerate() {
                let w = weights[slot];
                let k = keep(slot);
                if k != 0.0 {
                    for (o, &gs) in gh.row_mut(j).iter_mut().zip(&g_sum) {
                        *o += k * w * gs;
                    }
                }
                let g_score = w * (g_alpha[slot] - inner);
                let raw = rec.pre[i][slot];
                let g_raw = if raw > 0.0 { g_score } else { g_score * rec.inputs.slope };
                g_self_score += g_raw;
                for (o, &hj) in ga.row_mut(0)[d..].iter_mut().zip(hv.row(j)) {
                    *o += g_raw * hj;
                }
                for (o, &an) in gh.row_mut(j).iter_mut().zip(a_nbr) {
                    *o += g_raw * an;
                }
            }
            for (o, &hc) in ga.row_mut(0)[..d].iter_mut().zip(hv.row(center)) {
                *o += g_self_score * hc;
            }
            for (o, &asf) in gh.row_mut(center).iter_mut().zip(a_self) {
                *o += g_self_score * asf;
            }
        }
        (gh, ga)
    }
}

/// Gradients of a scalar output with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the output.
    pub fn try_get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`; zeros of the given shape if `v` is off the path.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> DenseMatrix {
        self.try_get(v)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(shape.0, shape.1))
    }
}

#[inline]
pub(crate) fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

#[inline]
pub(crate) fn leaky_relu(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}
