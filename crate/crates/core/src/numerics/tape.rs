//! Reverse-mode automatic differentiation on a gradient tape.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append nodes in topological order and record which inputs produced them;
//! [`Tape::backward`] walks the nodes once in reverse, accumulating
//!-- via each op's hand-derived rule -- the gradient of a scalar loss with
//! respect to every node. Training code builds a fresh tape per step;
//! evaluation builds one and simply never calls `backward`, so the forward
//! arithmetic is bit-identical between the two paths.
//!
//! Broadcasting is deliberately narrow: the *right* operand of `add`/`mul`
//! may be a last-axis vector (a bias row) or a single scalar; everything
//! else must match shapes exactly. The narrow rule keeps every backward
//! reduction obvious and testable.

use crate::error::{Error, Result};

use super::tensor::{matmul_raw, Tensor};

/// Epsilon inside the power-normalization square root. Guards the all-zero
/// frame mid-training while shifting output power by less than 1e-12,
/// comfortably inside the 1e-9 unit-power contract.
pub(crate) const POWER_EPS: f64 = 1e-12;

/// Default epsilon for layer normalization. Small enough that the
/// pre-affine variance sits within 1e-6 of 1 for any realistically scaled
/// activation row.
pub const LAYER_NORM_EPS: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// How the right operand of an elementwise op maps onto the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// Shapes match element for element.
    None,
    /// Right operand is a last-axis vector applied to every row.
    Row,
    /// Right operand is a single value applied everywhere.
    Scalar,
}

/// Recorded operation; stores operand handles plus whatever context the
/// backward rule needs beyond the node values themselves.
#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Add { a: NodeId, b: NodeId, bcast: Broadcast },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId, bcast: Broadcast },
    Scale { a: NodeId, c: f64 },
    Relu { a: NodeId },
    Gelu { a: NodeId },
    Sigmoid { a: NodeId },
    /// Softmax over the last axis.
    Softmax { a: NodeId },
    /// Layer normalization over the last axis with affine parameters.
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    /// Row gather from a 2-D table (embedding lookup).
    GatherRows { table: NodeId, idx: Vec<usize> },
    Transpose { a: NodeId, m: usize, n: usize },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
    /// Whole-buffer rescale to unit mean-square power; `scale` is saved at
    /// forward time for the backward rule.
    PowerNormalize { a: NodeId, scale: f64 },
    /// Mean cross-entropy of row-wise softmax against integer targets,
    /// counting only unmasked rows.
    CeLoss { logits: NodeId, targets: Vec<usize>, mask: Vec<bool>, count: usize },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Gradient tape: one forward pass's values plus enough context to run the
/// reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn last_axis(shape: &[usize]) -> usize {
    *shape.last().expect("tape tensors are never zero-dimensional")
}

fn row_count(shape: &[usize]) -> usize {
    shape.iter().product::<usize>() / last_axis(shape)
}

impl Tape {
    /// Empty tape.
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> NodeId {
        let grad = vec![0.0; data.len()];
        self.nodes.push(Node { shape, data, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf. `trainable` marks it as a parameter whose
    /// gradient the optimizer will consume; constants use [`Tape::constant`].
    pub fn leaf(&mut self, t: &Tensor, trainable: bool) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf { trainable })
    }

    /// Records a tensor as a non-trainable leaf.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.leaf(t, false)
    }

    /// True when `id` was recorded as a trainable leaf (an optimizer may
    /// consume its gradient); constants and derived nodes are not.
    pub fn is_trainable(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    /// Value buffer of a node.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Shape of a node.
    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Gradient buffer of a node (zeros before [`Tape::backward`] runs).
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    /// Copies a node's value out as a [`Tensor`].
    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.shape_of(id).to_vec(), self.value(id).to_vec())
            .expect("tape nodes always hold consistent shape/data")
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when no nodes are recorded.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- shape helpers -------------------------------------------------

    fn broadcast_kind(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Broadcast> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa == sb {
            Ok(Broadcast::None)
        } else if self.nodes[b.0].data.len() == 1 {
            Ok(Broadcast::Scalar)
        } else if self.nodes[b.0].data.len() == last_axis(sa) {
            Ok(Broadcast::Row)
        } else {
            Err(Error::shape(op, format!("{sa:?} vs {sb:?}")))
        }
    }

    fn matrix_dims(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let s = &self.nodes[id.0].shape;
        if s.len() == 2 {
            Ok((s[0], s[1]))
        } else {
            Err(Error::shape(op, format!("expected a matrix, got {s:?}")))
        }
    }

    // ---- operations ----------------------------------------------------

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
        }
        let data = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        Ok(self.push(vec![m, n], data, Op::MatMul { a, b, m, k, n }))
    }

    /// Elementwise sum; `b` may be a last-axis vector (bias) or scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let bcast = self.broadcast_kind("add", a, b)?;
        let data = self.zip_broadcast(a, b, bcast, |x, y| x + y);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Add { a, b, bcast }))
    }

    /// Elementwise difference; shapes must match exactly.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(
                "sub",
                format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            ));
        }
        let data = self.zip_broadcast(a, b, Broadcast::None, |x, y| x - y);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Sub { a, b }))
    }

    /// Elementwise (Hadamard) product; `b` may be a last-axis vector or scalar.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let bcast = self.broadcast_kind("mul", a, b)?;
        let data = self.zip_broadcast(a, b, bcast, |x, y| x * y);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Mul { a, b, bcast }))
    }

    /// Multiplication by a compile-time constant (no gradient into `c`).
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.nodes[a.0].data.iter().map(|v| v * c).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Scale { a, c })
    }

    /// Rectified linear unit.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a.0].data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Relu { a })
    }

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a.0].data.iter().map(|&v| gelu_fwd(v)).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Gelu { a })
    }

    /// Logistic sigmoid.
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a.0].data.iter().map(|&v| sigmoid_fwd(v)).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::Sigmoid { a })
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a.0].shape.clone();
        let cols = last_axis(&shape);
        let mut data = self.nodes[a.0].data.clone();
        for row in data.chunks_mut(cols) {
            softmax_row(row);
        }
        self.push(shape, data, Op::Softmax { a })
    }

    /// Layer normalization over the last axis with affine `gamma`/`beta`
    /// (both last-axis vectors).
    pub fn layer_norm(
        &mut self,
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let shape = self.nodes[a.0].shape.clone();
        let cols = last_axis(&shape);
        if self.nodes[gamma.0].data.len() != cols || self.nodes[beta.0].data.len() != cols {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma/beta must have {cols} elements, got {}/{}",
                    self.nodes[gamma.0].data.len(),
                    self.nodes[beta.0].data.len()
                ),
            ));
        }
        let mut data = vec![0.0; self.nodes[a.0].data.len()];
        for (r, row) in self.nodes[a.0].data.chunks(cols).enumerate() {
            let (mean, inv_std) = row_moments(row, eps);
            for (c, &x) in row.iter().enumerate() {
                let xhat = (x - mean) * inv_std;
                data[r * cols + c] =
                    self.nodes[gamma.0].data[c] * xhat + self.nodes[beta.0].data[c];
            }
        }
        Ok(self.push(shape, data, Op::LayerNorm { a, gamma, beta, eps }))
    }

    /// Gathers rows of a 2-D table (embedding lookup).
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.matrix_dims("gather_rows", table)?;
        if idx.is_empty() {
            return Err(Error::Degenerate("gather_rows with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!("gather index {bad} out of range 0..{rows}")));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&self.nodes[table.0].data[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(vec![idx.len(), cols], data, Op::GatherRows { table, idx: idx.to_vec() }))
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(vec![n, m], data, Op::Transpose { a, m, n }))
    }

    /// Sum of every element; yields shape `[1]`.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![1], vec![s], Op::SumAll { a })
    }

    /// Mean of every element; yields shape `[1]`.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![1], vec![s / n], Op::MeanAll { a })
    }

    /// Rescales the whole buffer to unit mean-square power.
    pub fn power_normalize(&mut self, a: NodeId) -> NodeId {
        let scale = power_scale(&self.nodes[a.0].data);
        let data = self.nodes[a.0].data.iter().map(|v| v * scale).collect();
        self.push(self.nodes[a.0].shape.clone(), data, Op::PowerNormalize { a, scale })
    }

    /// Mean softmax cross-entropy of `logits` (`[rows, vocab]`) against
    /// integer `targets`, averaged over rows where `mask` is true.
    pub fn ce_loss(&mut self, logits: NodeId, targets: &[usize], mask: &[bool]) -> Result<NodeId> {
        let (rows, vocab) = self.matrix_dims("ce_loss", logits)?;
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::shape(
                "ce_loss",
                format!("{rows} logit rows vs {} targets / {} mask entries", targets.len(), mask.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Contract(format!("target {bad} out of vocab 0..{vocab}")));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Degenerate("ce_loss with every position masked".into()));
        }
        let mut total = 0.0;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let row = &self.nodes[logits.0].data[r * vocab..(r + 1) * vocab];
            total += log_sum_exp(row) - row[targets[r]];
        }
        let loss = total / count as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CeLoss { logits, targets: targets.to_vec(), mask: mask.to_vec(), count },
        ))
    }

    fn zip_broadcast(
        &self,
        a: NodeId,
        b: NodeId,
        bcast: Broadcast,
        f: impl Fn(f64, f64) -> f64,
    ) -> Vec<f64> {
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        match bcast {
            Broadcast::None => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => da.iter().map(|&x| f(x, db[0])).collect(),
            Broadcast::Row => {
                let n = db.len();
                da.iter().enumerate().map(|(i, &x)| f(x, db[i % n])).collect()
            }
        }
    }

    // ---- reverse pass ----------------------------------------------------

    /// Runs the reverse pass from a scalar loss node, accumulating gradients
    /// on every node of the tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf { .. } => {}
                Op::MatMul { a, b, m, k, n } => {
                    let g = self.nodes[i].grad.clone();
                    // dA = dC . B^T
                    let bt = transpose_raw(&self.nodes[b.0].data, k, n);
                    let da = matmul_raw(&g, &bt, m, n, k);
                    accumulate(&mut self.nodes[a.0].grad, &da);
                    // dB = A^T . dC
                    let at = transpose_raw(&self.nodes[a.0].data, m, k);
                    let db = matmul_raw(&at, &g, k, m, n);
                    accumulate(&mut self.nodes[b.0].grad, &db);
                }
                Op::Add { a, b, bcast } => {
                    let g = self.nodes[i].grad.clone();
                    accumulate(&mut self.nodes[a.0].grad, &g);
                    self.reduce_into(b, &g, bcast, None);
                }
                Op::Sub { a, b } => {
                    let g = self.nodes[i].grad.clone();
                    accumulate(&mut self.nodes[a.0].grad, &g);
                    for (gb, gv) in self.nodes[b.0].grad.iter_mut().zip(&g) {
                        *gb -= gv;
                    }
                }
                Op::Mul { a, b, bcast } => {
                    let g = self.nodes[i].grad.clone();
                    // d/da = g * b (with b broadcast forward)
                    let db_data = self.nodes[b.0].data.clone();
                    {
                        let ga = &mut self.nodes[a.0].grad;
                        match bcast {
                            Broadcast::None => {
                                for ((d, &gv), &bv) in ga.iter_mut().zip(&g).zip(&db_data) {
                                    *d += gv * bv;
                                }
                            }
                            Broadcast::Scalar => {
                                for (d, &gv) in ga.iter_mut().zip(&g) {
                                    *d += gv * db_data[0];
                                }
                            }
                            Broadcast::Row => {
                                let n = db_data.len();
                                for (idx, (d, &gv)) in ga.iter_mut().zip(&g).enumerate() {
                                    *d += gv * db_data[idx % n];
                                }
                            }
                        }
                    }
                    // d/db = g * a, reduced over the broadcast
                    let da_data = self.nodes[a.0].data.clone();
                    self.reduce_into(b, &g, bcast, Some(&da_data));
                }
                Op::Scale { a, c } => {
                    let g = self.nodes[i].grad.clone();
                    for (d, &gv) in self.nodes[a.0].grad.iter_mut().zip(&g) {
                        *d += gv * c;
                    }
                }
                Op::Relu { a } => {
                    let g = self.nodes[i].grad.clone();
                    let input = self.nodes[a.0].data.clone();
                    for ((d, &gv), &x) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(&input) {
                        if x > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Gelu { a } => {
                    let g = self.nodes[i].grad.clone();
                    let input = self.nodes[a.0].data.clone();
                    for ((d, &gv), &x) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(&input) {
                        *d += gv * gelu_bwd(x);
                    }
                }
                Op::Sigmoid { a } => {
                    let g = self.nodes[i].grad.clone();
                    let out = self.nodes[i].data.clone();
                    for ((d, &gv), &s) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(&out) {
                        *d += gv * s * (1.0 - s);
                    }
                }
                Op::Softmax { a } => {
                    let g = self.nodes[i].grad.clone();
                    let out = self.nodes[i].data.clone();
                    let cols = last_axis(&self.nodes[i].shape);
                    let rows = row_count(&self.nodes[i].shape);
                    let ga = &mut self.nodes[a.0].grad;
                    for r in 0..rows {
                        let s = &out[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = s.iter().zip(gr).map(|(&sv, &gv)| sv * gv).sum();
                        for c in 0..cols {
                            ga[r * cols + c] += s[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::LayerNorm { a, gamma, beta, eps } => {
                    self.layer_norm_backward(i, a, gamma, beta, eps);
                }
                Op::GatherRows { table, idx } => {
                    let g = self.nodes[i].grad.clone();
                    let cols = last_axis(&self.nodes[i].shape);
                    let gt = &mut self.nodes[table.0].grad;
                    for (r, &src_row) in idx.iter().enumerate() {
                        for c in 0..cols {
                            gt[src_row * cols + c] += g[r * cols + c];
                        }
                    }
                }
                Op::Transpose { a, m, n } => {
                    // Output is [n,m]; transposing the gradient gives [m,n].
                    let g = transpose_raw(&self.nodes[i].grad, n, m);
                    accumulate(&mut self.nodes[a.0].grad, &g);
                }
                Op::SumAll { a } => {
                    let gv = self.nodes[i].grad[0];
                    for d in self.nodes[a.0].grad.iter_mut() {
                        *d += gv;
                    }
                }
                Op::MeanAll { a } => {
                    let n = self.nodes[a.0].data.len() as f64;
                    let gv = self.nodes[i].grad[0] / n;
                    for d in self.nodes[a.0].grad.iter_mut() {
                        *d += gv;
                    }
                }
                Op::PowerNormalize { a, scale } => {
                    // out = x*s with s = max(mean(x^2), eps)^(-1/2). Above
                    // the floor: dx_j = s*g_j - s^3/N * x_j * sum_i(g_i x_i);
                    // below it the scale is constant, so only the first term
                    // survives.
                    let g = self.nodes[i].grad.clone();
                    let x = self.nodes[a.0].data.clone();
                    let n = x.len() as f64;
                    let ms = x.iter().map(|&v| v * v).sum::<f64>() / n;
                    let gx: f64 = g.iter().zip(&x).map(|(&gv, &xv)| gv * xv).sum();
                    let s3 = if ms >= POWER_EPS { scale * scale * scale } else { 0.0 };
                    for ((d, &gv), &xv) in self.nodes[a.0].grad.iter_mut().zip(&g).zip(&x) {
                        *d += scale * gv - s3 / n * xv * gx;
                    }
                }
                Op::CeLoss { logits, targets, mask, count } => {
                    let gv = self.nodes[i].grad[0] / count as f64;
                    let vocab = last_axis(&self.nodes[logits.0].shape);
                    let data = self.nodes[logits.0].data.clone();
                    let gl = &mut self.nodes[logits.0].grad;
                    for (r, (&t, &m)) in targets.iter().zip(&mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let mut row = data[r * vocab..(r + 1) * vocab].to_vec();
                        softmax_row(&mut row);
                        for c in 0..vocab {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gl[r * vocab + c] += gv * (row[c] - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulates `g` into `b`'s gradient, reducing over the broadcast that
    /// expanded `b` at forward time. `with` multiplies elementwise first
    /// (used for `mul`, where d/db = g * a).
    fn reduce_into(&mut self, b: NodeId, g: &[f64], bcast: Broadcast, with: Option<&[f64]>) {
        let term = |i: usize| -> f64 {
            match with {
                Some(a) => g[i] * a[i],
                None => g[i],
            }
        };
        match bcast {
            Broadcast::None => {
                for (i, d) in self.nodes[b.0].grad.iter_mut().enumerate() {
                    *d += term(i);
                }
            }
            Broadcast::Scalar => {
                let total: f64 = (0..g.len()).map(term).sum();
                self.nodes[b.0].grad[0] += total;
            }
            Broadcast::Row => {
                let n = self.nodes[b.0].grad.len();
                for i in 0..g.len() {
                    self.nodes[b.0].grad[i % n] += term(i);
                }
            }
        }
    }

    fn layer_norm_backward(&mut self, out: usize, a: NodeId, gamma: NodeId, beta: NodeId, eps: f64) {
        let g = self.nodes[out].grad.clone();
        let x = self.nodes[a.0].data.clone();
        let gam = self.nodes[gamma.0].data.clone();
        let cols = last_axis(&self.nodes[out].shape);
        let rows = row_count(&self.nodes[out].shape);

        for r in 0..rows {
            let xr = &x[r * cols..(r + 1) * cols];
            let gr = &g[r * cols..(r + 1) * cols];
            let (mean, inv_std) = row_moments(xr, eps);
            let xhat: Vec<f64> = xr.iter().map(|&v| (v - mean) * inv_std).collect();

            // Affine parameter gradients.
            for c in 0..cols {
                self.nodes[beta.0].grad[c] += gr[c];
                self.nodes[gamma.0].grad[c] += gr[c] * xhat[c];
            }

            // Input gradient: dx = s*(dxhat - mean(dxhat) - xhat*mean(dxhat .* xhat))
            let dxhat: Vec<f64> = (0..cols).map(|c| gr[c] * gam[c]).collect();
            let m1: f64 = dxhat.iter().sum::<f64>() / cols as f64;
            let m2: f64 = dxhat.iter().zip(&xhat).map(|(&d, &h)| d * h).sum::<f64>() / cols as f64;
            for c in 0..cols {
                self.nodes[a.0].grad[r * cols + c] += inv_std * (dxhat[c] - m1 - xhat[c] * m2);
            }
        }
    }
}

// ---- shared scalar kernels ------------------------------------------------

fn accumulate(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn sigmoid_fwd(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place numerically stable softmax of one row.
fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Scale factor that takes a buffer to unit mean-square power. The floor
/// (rather than an additive epsilon) keeps the result power exactly 1 for
/// any non-degenerate input while still bounding the scale near zero.
pub(crate) fn power_scale(data: &[f64]) -> f64 {
    let ms = data.iter().map(|&v| v * v).sum::<f64>() / data.len() as f64;
    1.0 / ms.max(POWER_EPS).sqrt()
}
