//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Operations evaluate eagerly and record themselves on the tape. Because
//! value ids are arena indices and every operand must exist before it is
//! used, the recorded order is a topological order; replaying it backwards
//! visits each node exactly once and accumulates exact reverse-mode
//! gradients. A tape lives for a single training or evaluation step and is
//! then dropped; it must not be shared across threads.

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Arena index of a recorded value.
pub type ValueId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Leaves: inputs, constants and parameters. No backward rule.
    Leaf,
    Matmul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    AddRow { a: ValueId, bias: ValueId },
    Tanh { x: ValueId },
    Sigmoid { x: ValueId },
    Square { x: ValueId },
    Scale { x: ValueId, c: f64 },
    Transpose { x: ValueId },
    ConcatCols { parts: Vec<ValueId> },
    Sum { x: ValueId },
    SoftmaxXent { logits: ValueId, labels: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Single-use recording tape.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<ValueId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        id
    }

    /// Records a constant or input. Gradients do not flow into leaves'
    /// producers (they have none), but leaves still receive gradients.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf, value)
    }

    /// Records a trainable parameter: a leaf that is also remembered in
    /// registration order so callers can collect its gradient after
    /// [`Tape::backward`].
    pub fn param(&mut self, value: &Tensor) -> ValueId {
        let id = self.push(Op::Leaf, value.clone());
        self.params.push(id);
        id
    }

    /// Copies a computed value into a fresh leaf, cutting gradient flow.
    pub fn detach(&mut self, x: ValueId) -> ValueId {
        let v = self.nodes[x].value.clone();
        self.leaf(v)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Value of a 1×1 node.
    pub fn scalar_value(&self, id: ValueId) -> Result<f64> {
        let v = self.value(id);
        if v.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "expected scalar node, found shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    }

    pub fn params(&self) -> &[ValueId] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        Ok(self.push(Op::Matmul { a, b }, v))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.nodes[a].value.add(&self.nodes[b].value)?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.nodes[a].value.sub(&self.nodes[b].value)?;
        Ok(self.push(Op::Sub { a, b }, v))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.nodes[a].value.mul(&self.nodes[b].value)?;
        Ok(self.push(Op::Mul { a, b }, v))
    }

    /// Broadcasts a 1×n bias over the rows of an m×n matrix.
    pub fn add_row(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        let v = self.nodes[a].value.add_row(&self.nodes[bias].value)?;
        Ok(self.push(Op::AddRow { a, bias }, v))
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let v = self.nodes[x].value.tanh();
        self.push(Op::Tanh { x }, v)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let v = self.nodes[x].value.sigmoid();
        self.push(Op::Sigmoid { x }, v)
    }

    pub fn square(&mut self, x: ValueId) -> ValueId {
        let v = self.nodes[x].value.square();
        self.push(Op::Square { x }, v)
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let v = self.nodes[x].value.scale(c);
        self.push(Op::Scale { x, c }, v)
    }

    pub fn transpose(&mut self, x: ValueId) -> ValueId {
        let v = self.nodes[x].value.transpose();
        self.push(Op::Transpose { x }, v)
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&id| &self.nodes[id].value).collect();
        let v = Tensor::concat_cols(&tensors)?;
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            v,
        ))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let v = Tensor::scalar(self.nodes[x].value.sum());
        self.push(Op::Sum { x }, v)
    }

    /// Mean cross-entropy of softmax(logits) against integer labels,
    /// stabilized by per-row max subtraction. Returns a 1×1 node.
    pub fn softmax_xent(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let lt = &self.nodes[logits].value;
        let (batch, classes) = lt.shape();
        if labels.len() != batch {
            return Err(Error::validation(format!(
                "softmax_xent: {} labels for a batch of {batch}",
                labels.len()
            )));
        }
        for (&l, i) in labels.iter().zip(0..) {
            if l >= classes {
                return Err(Error::validation(format!(
                    "softmax_xent: label {l} out of range for {classes} classes (row {i})"
                )));
            }
        }
        let mut total = 0.0;
        for (row, &label) in lt.data().chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[label];
        }
        let v = Tensor::scalar(total / batch as f64);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
            },
            v,
        ))
    }

    /// Reverse pass: exact gradients of the scalar `loss` node with respect
    /// to every recorded value that influences it.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, found shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].clone() else {
                continue;
            };
            debug_assert_eq!(g.shape(), self.nodes[id].value.shape());
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let da = g.matmul(&self.nodes[*b].value.transpose())?;
                    let db = self.nodes[*a].value.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                }
                Op::Mul { a, b } => {
                    let da = g.mul(&self.nodes[*b].value)?;
                    let db = g.mul(&self.nodes[*a].value)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::AddRow { a, bias } => {
                    accumulate(&mut grads, *bias, g.col_sums())?;
                    accumulate(&mut grads, *a, g.clone())?;
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[id].value;
                    let dx = g.mul(&y.map(|v| 1.0 - v * v))?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Sigmoid { x } => {
                    let y = &self.nodes[id].value;
                    let dx = g.mul(&y.map(|v| v * (1.0 - v)))?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Square { x } => {
                    let dx = g.mul(&self.nodes[*x].value.scale(2.0))?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads, *x, g.scale(*c))?;
                }
                Op::Transpose { x } => {
                    accumulate(&mut grads, *x, g.transpose())?;
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.nodes[p].value.shape();
                        let mut dp = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            let src = &g.row(i)[offset..offset + cols];
                            dp.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(src);
                        }
                        offset += cols;
                        accumulate(&mut grads, p, dp)?;
                    }
                }
                Op::Sum { x } => {
                    let (rows, cols) = self.nodes[*x].value.shape();
                    accumulate(&mut grads, *x, Tensor::filled(rows, cols, g.data()[0]))?;
                }
                Op::SoftmaxXent { logits, labels } => {
                    let lt = &self.nodes[*logits].value;
                    let (batch, classes) = lt.shape();
                    let upstream = g.data()[0] / batch as f64;
                    let mut dl = Tensor::zeros(batch, classes);
                    for (i, (row, &label)) in lt.data().chunks(classes).zip(labels).enumerate() {
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                        let z: f64 = exps.iter().sum();
                        let out = &mut dl.data_mut()[i * classes..(i + 1) * classes];
                        for (j, e) in exps.iter().enumerate() {
                            let softmax = e / z;
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            out[j] = upstream * (softmax - onehot);
                        }
                    }
                    accumulate(&mut grads, *logits, dl)?;
                }
            }
        }
        Ok(Gradients { by_id: grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: ValueId, g: Tensor) -> Result<()> {
    match &mut grads[id] {
        Some(existing) => {
            *existing = existing.add(&g)?;
        }
        slot @ None => {
            *slot = Some(g);
        }
    }
    Ok(())
}

/// Gradients produced by [`Tape::backward`], indexed by value id.
#[derive(Debug)]
pub struct Gradients {
    by_id: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. node `id`, if any flowed there.
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.by_id.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, or zeros of `shape` if the node had no influence
    /// on the loss.
    pub fn get_or_zeros(&self, id: ValueId, shape: (usize, usize)) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.0, shape.1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_parameters_has_unit_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap());
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_scalar_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::scalar(3.0));
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::zeros(2, 2));
        let err = tape.backward(w).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn softmax_xent_uniform_two_classes() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(1, 2));
        let loss = tape.softmax_xent(logits, &[0]).unwrap();
        let v = tape.scalar_value(loss).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_saturated_correct_class() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&[vec![30.0, 0.0]]).unwrap());
        let loss = tape.softmax_xent(logits, &[0]).unwrap();
        assert!(tape.scalar_value(loss).unwrap() < 1e-9);
    }

    #[test]
    fn softmax_xent_hand_value() {
        // -log softmax([1,2,3])[2] = ln(e^-2 + e^-1 + 1)
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let loss = tape.softmax_xent(logits, &[2]).unwrap();
        let expected = ((-2.0f64).exp() + (-1.0f64).exp() + 1.0).ln();
        assert!((tape.scalar_value(loss).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn softmax_xent_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(1, 2));
        let err = tape.softmax_xent(logits, &[2]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::scalar(2.0));
        let d = tape.detach(w);
        let sq = tape.square(d);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get(d).unwrap().data(), &[4.0]);
    }

    #[test]
    fn gradient_accumulates_over_multiple_uses() {
        // loss = w*w + w  =>  dloss/dw = 2w + 1 = 7 at w=3
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::scalar(3.0));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.add(sq, w).unwrap();
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[7.0]);
    }

    #[test]
    fn recorded_order_is_topological() {
        let mut tape = Tape::new();
        let a = tape.param(&Tensor::scalar(1.0));
        let b = tape.param(&Tensor::scalar(2.0));
        let c = tape.add(a, b).unwrap();
        let d = tape.mul(c, a).unwrap();
        assert!(a < c && b < c && c < d);
    }
}
