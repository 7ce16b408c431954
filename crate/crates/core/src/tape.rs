//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records a forward computation as an append-only sequence of
//! nodes. Inputs of a node always have smaller indices, so the tape is
//! topologically ordered by construction and a single reverse sweep
//! propagates adjoints to every differentiation target exactly once.
//!
//! Two kinds of input nodes exist: [`Tape::leaf`] marks a differentiation
//! target (gradients are reported for it), while [`Tape::constant`] enters
//! a value that never needs a gradient. The reverse sweep prunes subtrees
//! that cannot reach a leaf, so freezing a parameter set is as simple as
//! entering it via `constant`.
//!
//! The op catalog is the small set needed by an embedding-and-MLP click
//! model and GAT-style attention: matrix-vector product, addition,
//! concatenation, tanh, sigmoid, LeakyReLU, ELU, softmax, elementwise
//! mean, scaling, dot product, weighted sum, and mean binary
//! cross-entropy. Every op validates operand shapes and rejects
//! non-finite results.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Predictions are clamped to this range before the logs in the
/// cross-entropy loss, which is undefined at exactly 0 or 1.
pub const BCE_CLAMP: f64 = 1e-12;

/// Index of a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    /// inputs: [matrix (m x n), vector (n)] -> vector (m)
    MatVec,
    /// inputs: [a, b] same shape
    Add,
    /// inputs: vectors, concatenated in order
    Concat,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
    Elu(f64),
    /// softmax over a vector, computed with max-subtraction
    Softmax,
    /// elementwise mean of n same-shaped inputs
    MeanN,
    /// scale by a compile-time constant
    Scale(f64),
    /// inputs: [a, b] same length -> scalar
    Dot,
    /// inputs: [weights (n), v_1..v_n (each m)] -> sum_j w_j * v_j
    WeightedSum,
    /// mean binary cross-entropy of a prediction vector against fixed labels
    BceMean(Vec<f64>),
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    /// true iff this node is a leaf or depends on one
    needs_grad: bool,
}

/// Record of a forward computation enabling reverse-mode gradient
/// accumulation. Confined to one thread; independent tapes may run in
/// parallel.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one reverse sweep. The tape itself is left
/// unchanged, so sweeps are repeatable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the swept output with respect to `id`.
    ///
    /// Returns a zero tensor for leaves the output does not depend on.
    pub fn get(&self, id: NodeId, tape: &Tape) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(id).shape()),
        }
    }

    pub fn get_opt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
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

    /// Value recorded for a node during the forward pass.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Enters a differentiation target.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, true)
    }

    /// Enters a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, vec![], value, false)
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value, needs_grad });
        id
    }

    fn any_needs_grad(&self, inputs: &[NodeId]) -> bool {
        inputs.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    fn record(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, name: &'static str) -> Result<NodeId> {
        value.check_finite(name)?;
        let ng = self.any_needs_grad(&inputs);
        Ok(self.push(op, inputs, value, ng))
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// `matrix (m x n) * vector (n) -> vector (m)`.
    pub fn matvec(&mut self, matrix: NodeId, vector: NodeId) -> Result<NodeId> {
        let m = self.value(matrix);
        let x = self.value(vector);
        if m.shape().len() != 2 || x.shape().len() != 1 || m.shape()[1] != x.shape()[0] {
            return Err(CoreError::ShapeMismatch {
                op: "matvec",
                left: m.shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        let rows = m.shape()[0];
        let xs = x.data();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = m.row(r);
            out.push(row.iter().zip(xs).map(|(a, b)| a * b).sum());
        }
        self.record(Op::MatVec, vec![matrix, vector], Tensor::from_vec(vec![rows], out)?, "matvec")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(CoreError::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.record(Op::Add, vec![a, b], Tensor::from_vec(shape, data)?, "add")
    }

    /// Concatenates rank-1 tensors in argument order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::Contract("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(CoreError::Contract(format!(
                    "concat expects vectors, got shape {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        let n = data.len();
        self.record(Op::Concat, parts.to_vec(), Tensor::from_vec(vec![n], data)?, "concat")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.map_unary(a, |v| v.tanh());
        self.record(Op::Tanh, vec![a], t, "tanh")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.map_unary(a, sigmoid);
        self.record(Op::Sigmoid, vec![a], t, "sigmoid")
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        let t = self.map_unary(a, |v| if v >= 0.0 { v } else { slope * v });
        self.record(Op::LeakyRelu(slope), vec![a], t, "leaky_relu")
    }

    pub fn elu(&mut self, a: NodeId, alpha: f64) -> Result<NodeId> {
        let t = self.map_unary(a, |v| if v >= 0.0 { v } else { alpha * (v.exp() - 1.0) });
        self.record(Op::Elu(alpha), vec![a], t, "elu")
    }

    /// Numerically stable softmax over a vector.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.shape().len() != 1 {
            return Err(CoreError::Contract(format!(
                "softmax expects a vector, got shape {:?}",
                t.shape()
            )));
        }
        let max = t.data().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = t.data().iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let n = data.len();
        self.record(Op::Softmax, vec![a], Tensor::from_vec(vec![n], data)?, "softmax")
    }

    /// Elementwise mean of same-shaped tensors.
    pub fn mean_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::Contract("mean of zero tensors".into()));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        let mut acc = vec![0.0; self.value(parts[0]).len()];
        for &p in parts {
            let t = self.value(p);
            if t.shape() != shape.as_slice() {
                return Err(CoreError::ShapeMismatch {
                    op: "mean_n",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            for (a, b) in acc.iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
        self.record(Op::MeanN, parts.to_vec(), Tensor::from_vec(shape, acc)?, "mean_n")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let t = self.map_unary(a, |v| c * v);
        self.record(Op::Scale(c), vec![a], t, "scale")
    }

    /// Dot product of two equal-length vectors, producing a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) || ta.shape().len() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "dot",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let v: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.record(Op::Dot, vec![a, b], Tensor::scalar(v), "dot")
    }

    /// `sum_j w_j * v_j` where `weights` is a length-n vector and each
    /// `v_j` shares one shape.
    pub fn weighted_sum(&mut self, weights: NodeId, values: &[NodeId]) -> Result<NodeId> {
        let w = self.value(weights);
        if w.shape().len() != 1 || w.len() != values.len() {
            return Err(CoreError::ShapeMismatch {
                op: "weighted_sum",
                left: w.shape().to_vec(),
                right: vec![values.len()],
            });
        }
        if values.is_empty() {
            return Err(CoreError::Contract("weighted_sum of zero values".into()));
        }
        let shape = self.value(values[0]).shape().to_vec();
        let mut acc = vec![0.0; self.value(values[0]).len()];
        for (j, &v) in values.iter().enumerate() {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(CoreError::ShapeMismatch {
                    op: "weighted_sum",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            let wj = self.value(weights).data()[j];
            for (a, b) in acc.iter_mut().zip(t.data()) {
                *a += wj * b;
            }
        }
        let mut inputs = Vec::with_capacity(values.len() + 1);
        inputs.push(weights);
        inputs.extend_from_slice(values);
        self.record(Op::WeightedSum, inputs, Tensor::from_vec(shape, acc)?, "weighted_sum")
    }

    /// Mean binary cross-entropy of predictions against fixed 0/1 labels,
    /// with predictions clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce_mean(&mut self, preds: NodeId, labels: &[f64]) -> Result<NodeId> {
        let p = self.value(preds);
        if p.shape().len() != 1 || p.len() != labels.len() {
            return Err(CoreError::ShapeMismatch {
                op: "bce_mean",
                left: p.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if !labels.iter().all(|&y| y == 0.0 || y == 1.0) {
            return Err(CoreError::Contract("bce labels must be 0 or 1".into()));
        }
        let loss = bce_mean_value(p.data(), labels);
        self.record(Op::BceMean(labels.to_vec()), vec![preds], Tensor::scalar(loss), "bce_mean")
    }

    fn map_unary(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data: Vec<f64> = t.data().iter().map(|&v| f(v)).collect();
        Tensor::from_vec(t.shape().to_vec(), data).expect("unary op preserves shape")
    }

    // ── reverse sweep ────────────────────────────────────────────────

    /// Reverse sweep from a scalar output. The tape is not modified, so
    /// repeated sweeps return bit-identical gradients.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        self.backward_seeded(output, 1.0)
    }

    fn backward_seeded(&self, output: NodeId, seed: f64) -> Result<Gradients> {
        if !self.value(output).is_scalar() {
            return Err(CoreError::Contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(seed));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(go) = grads[idx].take() else { continue };
            self.propagate(idx, &go, &mut grads)?;
            grads[idx] = Some(go);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut grads[id.0];
        match slot {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => {
                let mut t = Tensor::zeros(self.value(id).shape());
                t.data_mut().copy_from_slice(delta);
                *slot = Some(t);
            }
        }
    }

    fn propagate(&self, idx: usize, go: &Tensor, grads: &mut Vec<Option<Tensor>>) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatVec => {
                let (m_id, x_id) = (node.inputs[0], node.inputs[1]);
                let m = self.value(m_id);
                let x = self.value(x_id);
                let (rows, cols) = (m.shape()[0], m.shape()[1]);
                if self.nodes[m_id.0].needs_grad {
                    // d/dM = go (outer) x
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let g = go.data()[r];
                        let dst = &mut d[r * cols..(r + 1) * cols];
                        for (dv, xv) in dst.iter_mut().zip(x.data()) {
                            *dv = g * xv;
                        }
                    }
                    self.accumulate(grads, m_id, &d);
                }
                if self.nodes[x_id.0].needs_grad {
                    // d/dx = M^T go
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        let g = go.data()[r];
                        let row = m.row(r);
                        for (dv, mv) in d.iter_mut().zip(row) {
                            *dv += g * mv;
                        }
                    }
                    self.accumulate(grads, x_id, &d);
                }
            }
            Op::Add => {
                self.accumulate(grads, node.inputs[0], go.data());
                self.accumulate(grads, node.inputs[1], go.data());
            }
            Op::Concat => {
                let mut offset = 0;
                for &p in &node.inputs {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, &go.data()[offset..offset + n]);
                    offset += n;
                }
            }
            Op::Tanh => {
                let y = node.value.data();
                let d: Vec<f64> = go.data().iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect();
                self.accumulate(grads, node.inputs[0], &d);
            }
            Op::Sigmoid => {
                let y = node.value.data();
                let d: Vec<f64> = go.data().iter().zip(y).map(|(g, v)| g * v * (1.0 - v)).collect();
                self.accumulate(grads, node.inputs[0], &d);
            }
            Op::LeakyRelu(slope) => {
                let x = self.value(node.inputs[0]).data();
                let d: Vec<f64> = go
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v >= 0.0 { *g } else { g * slope })
                    .collect();
                self.accumulate(grads, node.inputs[0], &d);
            }
            Op::Elu(alpha) => {
                let x = self.value(node.inputs[0]).data();
                let d: Vec<f64> = go
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v >= 0.0 { *g } else { g * alpha * v.exp() })
                    .collect();
                self.accumulate(grads, node.inputs[0], &d);
            }
            Op::Softmax => {
                // dx = y ⊙ (g − (g·y))
                let y = node.value.data();
                let gy: f64 = go.data().iter().zip(y).map(|(g, v)| g * v).sum();
                let d: Vec<f64> = go.data().iter().zip(y).map(|(g, v)| v * (g - gy)).collect();
                self.accumulate(grads, node.inputs[0], &d);
            }
            Op::MeanN => {
                let inv = 1.0 / node.inputs.len() as f64;
                let d: Vec<f64> = go.data().iter().map(|g| g * inv).collect();
                for &p in &node.inputs {
                    self.accumulate(grads, p, &d);
                }
            }
            Op::Scale(c) => {
                let d: Vec<f64> = go.data().iter().map(|g| g * c).collect();
                self.accumulate(grads, node.inputs[0], &d);
            }
            Op::Dot => {
                let (a_id, b_id) = (node.inputs[0], node.inputs[1]);
                let g = go.data()[0];
                if self.nodes[a_id.0].needs_grad {
                    let d: Vec<f64> = self.value(b_id).data().iter().map(|v| g * v).collect();
                    self.accumulate(grads, a_id, &d);
                }
                if self.nodes[b_id.0].needs_grad {
                    let d: Vec<f64> = self.value(a_id).data().iter().map(|v| g * v).collect();
                    self.accumulate(grads, b_id, &d);
                }
            }
            Op::WeightedSum => {
                let w_id = node.inputs[0];
                let values = &node.inputs[1..];
                let w = self.value(w_id).data();
                if self.nodes[w_id.0].needs_grad {
                    let d: Vec<f64> = values
                        .iter()
                        .map(|&v| go.data().iter().zip(self.value(v).data()).map(|(g, x)| g * x).sum())
                        .collect();
                    self.accumulate(grads, w_id, &d);
                }
                for (j, &v) in values.iter().enumerate() {
                    if self.nodes[v.0].needs_grad {
                        let wj = w[j];
                        let d: Vec<f64> = go.data().iter().map(|g| g * wj).collect();
                        self.accumulate(grads, v, &d);
                    }
                }
            }
            Op::BceMean(labels) => {
                let p = self.value(node.inputs[0]).data();
                let g = go.data()[0];
                let inv = 1.0 / labels.len() as f64;
                let lo = BCE_CLAMP;
                let hi = 1.0 - BCE_CLAMP;
                let d: Vec<f64> = p
                    .iter()
                    .zip(labels)
                    .map(|(&pv, &y)| {
                        // clamp is flat outside (lo, hi)
                        if pv <= lo || pv >= hi {
                            0.0
                        } else {
                            g * inv * (-y / pv + (1.0 - y) / (1.0 - pv))
                        }
                    })
                    .collect();
                self.accumulate(grads, node.inputs[0], &d);
            }
        }
        Ok(())
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

/// Mean binary cross-entropy with the clamping rule shared by the tape op
/// and the evaluation metrics.
pub fn bce_mean_value(preds: &[f64], labels: &[f64]) -> f64 {
    let n = preds.len() as f64;
    preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_diff_grad;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[0.0, 0.0, 0.0]));
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_of_equal_inputs_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[1.3, 1.3, 1.3, 1.3]));
        let y = tape.softmax(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[-3.0, 700.0, 0.5, 2.0]));
        let y = tape.softmax(x).unwrap();
        let s: f64 = tape.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(tape.value(y).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn leaky_relu_negative_slope() {
        // slope 0.2 on a negative input
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[-1.0]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert!((tape.value(y).data()[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn elu_and_leaky_are_continuous_at_zero() {
        let mut tape = Tape::new();
        let lo = tape.leaf(vec_t(&[-1e-12]));
        let hi = tape.leaf(vec_t(&[1e-12]));
        let e_lo = tape.elu(lo, 1.0).unwrap();
        let e_hi = tape.elu(hi, 1.0).unwrap();
        let l_lo = tape.leaky_relu(lo, 0.2).unwrap();
        let l_hi = tape.leaky_relu(hi, 0.2).unwrap();
        assert!((tape.value(e_hi).data()[0] - tape.value(e_lo).data()[0]).abs() < 1e-10);
        assert!((tape.value(l_hi).data()[0] - tape.value(l_lo).data()[0]).abs() < 1e-10);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        // d sigmoid(0) = 0.25
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[0.0]));
        let y = tape.sigmoid(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!((g.get(x, &tape).data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn matvec_gradient_with_ones_seed() {
        // y = Wx, W = [[1,2],[3,4]], x = (1,1); sum(y) seeded with ones
        // gives dW = [[1,1],[1,1]].
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let x = tape.leaf(vec_t(&[1.0, 1.0]));
        let y = tape.matvec(w, x).unwrap();
        let ones = tape.constant(vec_t(&[1.0, 1.0]));
        let s = tape.dot(y, ones).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w, &tape).data(), &[1.0, 1.0, 1.0, 1.0]);
        // dx = W^T * ones = (4, 6)
        assert_eq!(g.get(x, &tape).data(), &[4.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[1.0, 2.0]));
        let y = tape.tanh(x).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn backward_is_repeatable() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[0.3, -0.7, 1.1]));
        let s = tape.softmax(x).unwrap();
        let t = tape.tanh(s).unwrap();
        let w = tape.constant(vec_t(&[1.0, -2.0, 0.5]));
        let out = tape.dot(t, w).unwrap();
        let g1 = tape.backward(out).unwrap();
        let g2 = tape.backward(out).unwrap();
        assert_eq!(g1.get(x, &tape).data(), g2.get(x, &tape).data());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[2.0]));
        let c = tape.constant(vec_t(&[3.0]));
        let y = tape.dot(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get_opt(c).is_none());
        assert_eq!(g.get(x, &tape).data(), &[3.0]);
    }

    #[test]
    fn shape_mismatch_diagnostics_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec_t(&[1.0, 2.0]));
        let b = tape.leaf(vec_t(&[1.0, 2.0, 3.0]));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn bce_mean_matches_hand_arithmetic() {
        // {(0.9, 1), (0.2, 0)} -> (-ln 0.9 - ln 0.8) / 2
        let mut tape = Tape::new();
        let p = tape.leaf(vec_t(&[0.9, 0.2]));
        let l = tape.bce_mean(p, &[1.0, 0.0]).unwrap();
        let expect = (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0;
        assert!((tape.value(l).item().unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn every_op_gradient_matches_finite_differences() {
        // Random small tensors, central differences with h = 1e-5,
        // relative error < 1e-6. Points are kept away from the
        // LeakyReLU/ELU kink so the FD estimate is valid.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);

        for trial in 0..20 {
            let n = 3 + trial % 3;
            let xv: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.05..1.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let wv: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();

            // scalar pipeline touching every op kind
            let eval = |x: &Tensor, w: &Tensor| -> f64 {
                let mut tape = Tape::new();
                let xl = tape.leaf(x.clone());
                let wl = tape.leaf(w.clone());
                let mv = tape.matvec(wl, xl).unwrap(); // w is 2 x n
                let th = tape.tanh(mv).unwrap();
                let sg = tape.sigmoid(th).unwrap();
                let lr = tape.leaky_relu(xl, 0.2).unwrap();
                let el = tape.elu(lr, 1.0).unwrap();
                let sm = tape.softmax(el).unwrap();
                let mn = tape.mean_n(&[sm, el]).unwrap();
                let sc = tape.scale(mn, 1.7).unwrap();
                let cc = tape.concat(&[sg, sc]).unwrap();
                let wsum = {
                    let half = tape.scale(cc, 0.5).unwrap();
                    let wts = tape.softmax(cc).unwrap();
                    let vals: Vec<NodeId> = (0..tape.value(wts).len()).map(|_| half).collect();
                    tape.weighted_sum(wts, &vals).unwrap()
                };
                let labels: Vec<f64> = (0..tape.value(wsum).len())
                    .map(|i| (i % 2) as f64)
                    .collect();
                let prob = tape.sigmoid(wsum).unwrap();
                let loss = tape.bce_mean(prob, &labels).unwrap();
                tape.value(loss).item().unwrap()
            };

            let x = Tensor::vector(xv).unwrap();
            let w = Tensor::matrix(2, n, wv).unwrap();

            // reverse-mode gradients
            let (gx, gw) = {
                let mut tape = Tape::new();
                let xl = tape.leaf(x.clone());
                let wl = tape.leaf(w.clone());
                let mv = tape.matvec(wl, xl).unwrap();
                let th = tape.tanh(mv).unwrap();
                let sg = tape.sigmoid(th).unwrap();
                let lr = tape.leaky_relu(xl, 0.2).unwrap();
                let el = tape.elu(lr, 1.0).unwrap();
                let sm = tape.softmax(el).unwrap();
                let mn = tape.mean_n(&[sm, el]).unwrap();
                let sc = tape.scale(mn, 1.7).unwrap();
                let cc = tape.concat(&[sg, sc]).unwrap();
                let half = tape.scale(cc, 0.5).unwrap();
                let wts = tape.softmax(cc).unwrap();
                let vals: Vec<NodeId> = (0..tape.value(wts).len()).map(|_| half).collect();
                let wsum = tape.weighted_sum(wts, &vals).unwrap();
                let labels: Vec<f64> = (0..tape.value(wsum).len())
                    .map(|i| (i % 2) as f64)
                    .collect();
                let prob = tape.sigmoid(wsum).unwrap();
                let loss = tape.bce_mean(prob, &labels).unwrap();
                let g = tape.backward(loss).unwrap();
                (g.get(xl, &tape), g.get(wl, &tape))
            };

            let fd_x = finite_diff_grad(|t| Ok(eval(t, &w)), &x, 1e-5).unwrap();
            let fd_w = finite_diff_grad(|t| Ok(eval(&x, t)), &w, 1e-5).unwrap();

            for (a, b) in gx.data().iter().zip(fd_x.data()) {
                let denom = a.abs().max(b.abs()).max(1e-8);
                assert!((a - b).abs() / denom < 1e-6, "x grad {a} vs fd {b}");
            }
            for (a, b) in gw.data().iter().zip(fd_w.data()) {
                let denom = a.abs().max(b.abs()).max(1e-8);
                assert!((a - b).abs() / denom < 1e-6, "w grad {a} vs fd {b}");
            }
        }
    }
}
