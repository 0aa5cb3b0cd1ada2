//! A recurrent classifier: one cell (LSTM or LMN) plus a linear output head.
//!
//! This is the monolithic model trained by the plain and EWC configurations,
//! and the building block wrapped by each GIM module. Logits are linear; the
//! softmax lives inside the cross-entropy loss.

use crate::cells::{
    lmn_unroll, lstm_unroll, LmnIds, LmnParams, LmnTrace, LstmIds, LstmParams, LstmTrace,
};
use crate::data::SequenceBatch;
use crate::error::Result;
use crate::numcore::{Rng, Tape, Tensor, ValueId};

/// Which recurrent cell a model is built on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    Lmn,
}

/// Hidden-layer sizes. For LSTM only `hidden` is used; the LMN has separate
/// functional and memory widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellSizes {
    pub hidden: usize,
    pub functional: usize,
    pub memory: usize,
}

impl CellSizes {
    pub fn uniform(n: usize) -> Self {
        CellSizes {
            hidden: n,
            functional: n,
            memory: n,
        }
    }
}

/// Cell parameters of either kind.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum CellParams {
    Lstm(LstmParams),
    Lmn(LmnParams),
}

impl CellParams {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Lmn(_) => CellKind::Lmn,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.input_size,
            CellParams::Lmn(p) => p.input_size,
        }
    }

    /// Width of the state the output head reads: h for LSTM, m for LMN.
    pub fn head_input_size(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.hidden_size,
            CellParams::Lmn(p) => p.memory_size,
        }
    }

    /// Width of the per-step activations fed to the next GIM module:
    /// h for LSTM, [m; h] for LMN.
    pub fn feed_width(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.hidden_size,
            CellParams::Lmn(p) => p.memory_size + p.functional_size,
        }
    }
}

/// Registered tape ids for either cell kind.
pub enum CellIds {
    Lstm(LstmIds),
    Lmn(LmnIds),
}

impl CellIds {
    pub fn ordered(&self) -> Vec<ValueId> {
        match self {
            CellIds::Lstm(ids) => ids.ordered(),
            CellIds::Lmn(ids) => ids.ordered(),
        }
    }
}

/// Per-step traces of either cell kind.
pub enum CellTrace {
    Lstm(LstmTrace),
    Lmn(LmnTrace),
}

impl CellTrace {
    /// Final state read by the output head (h_T or m_T).
    pub fn head_input(&self) -> ValueId {
        match self {
            CellTrace::Lstm(t) => t.final_state.h,
            CellTrace::Lmn(t) => t.final_m,
        }
    }

    /// Activations at step `t` to feed to the next module, in the order the
    /// forward pass concatenates them after the raw input.
    pub fn feed_at(&self, t: usize) -> Vec<ValueId> {
        match self {
            CellTrace::Lstm(tr) => vec![tr.hs[t]],
            CellTrace::Lmn(tr) => vec![tr.ms[t], tr.hs[t]],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CellTrace::Lstm(t) => t.hs.len(),
            CellTrace::Lmn(t) => t.hs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Recurrent classifier: cell plus linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub cell: CellParams,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub classes: usize,
}

/// Tape ids of a registered classifier.
pub struct ClassifierIds {
    pub cell: CellIds,
    pub head_w: ValueId,
    pub head_b: ValueId,
}

impl ClassifierIds {
    /// All parameter ids in the order of [`Classifier::named`].
    pub fn ordered(&self) -> Vec<ValueId> {
        let mut ids = self.cell.ordered();
        ids.push(self.head_w);
        ids.push(self.head_b);
        ids
    }
}

/// Everything a forward pass produces: logits plus the cell trace (needed by
/// GIM to feed activations onward).
pub struct ForwardOut {
    pub logits: ValueId,
    pub trace: CellTrace,
}

impl Classifier {
    pub fn init(
        rng: &mut Rng,
        kind: CellKind,
        input_size: usize,
        sizes: CellSizes,
        classes: usize,
    ) -> Self {
        let cell = match kind {
            CellKind::Lstm => CellParams::Lstm(LstmParams::init(rng, input_size, sizes.hidden)),
            CellKind::Lmn => CellParams::Lmn(LmnParams::init(
                rng,
                input_size,
                sizes.functional,
                sizes.memory,
            )),
        };
        let head_in = cell.head_input_size();
        let bound = (6.0 / (head_in + classes) as f64).sqrt();
        let head_w = Tensor::new(
            head_in,
            classes,
            (0..head_in * classes)
                .map(|_| rng.range(-bound, bound))
                .collect(),
        )
        .expect("counted data");
        Classifier {
            cell,
            head_w,
            head_b: Tensor::zeros(1, classes),
            classes,
        }
    }

    /// Named parameters in a fixed order (cell parameters, then head).
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = match &self.cell {
            CellParams::Lstm(p) => p
                .named()
                .into_iter()
                .map(|(n, t)| (format!("cell.{n}"), t))
                .collect(),
            CellParams::Lmn(p) => p
                .named()
                .into_iter()
                .map(|(n, t)| (format!("cell.{n}"), t))
                .collect(),
        };
        out.push(("head_w".to_string(), &self.head_w));
        out.push(("head_b".to_string(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = match &mut self.cell {
            CellParams::Lstm(p) => p.tensors_mut(),
            CellParams::Lmn(p) => p.tensors_mut(),
        };
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Byte-exact snapshot of every parameter, for freezing checks.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ClassifierIds {
        let cell = match &self.cell {
            CellParams::Lstm(p) => CellIds::Lstm(p.register(tape, trainable)),
            CellParams::Lmn(p) => CellIds::Lmn(p.register(tape, trainable)),
        };
        let (head_w, head_b) = if trainable {
            (tape.param(&self.head_w), tape.param(&self.head_b))
        } else {
            (
                tape.leaf(self.head_w.clone()),
                tape.leaf(self.head_b.clone()),
            )
        };
        ClassifierIds {
            cell,
            head_w,
            head_b,
        }
    }

    /// Unrolls the cell over per-step input nodes and applies the head to
    /// the final state. `batch` is the row count of each input node.
    pub fn forward_steps(
        &self,
        tape: &mut Tape,
        ids: &ClassifierIds,
        inputs: &[ValueId],
        batch: usize,
    ) -> Result<ForwardOut> {
        let trace = match (&self.cell, &ids.cell) {
            (CellParams::Lstm(p), CellIds::Lstm(cell_ids)) => CellTrace::Lstm(lstm_unroll(
                tape,
                cell_ids,
                inputs,
                batch,
                p.hidden_size,
            )?),
            (CellParams::Lmn(p), CellIds::Lmn(cell_ids)) => {
                CellTrace::Lmn(lmn_unroll(tape, cell_ids, inputs, batch, p.memory_size)?)
            }
            _ => unreachable!("cell ids registered from this classifier"),
        };
        let state = trace.head_input();
        let proj = tape.matmul(state, ids.head_w)?;
        let logits = tape.add_row(proj, ids.head_b)?;
        Ok(ForwardOut { logits, trace })
    }

    /// Convenience forward over a whole batch on a fresh tape; returns the
    /// logits tensor.
    pub fn logits(&self, batch: &SequenceBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let ids = self.register(&mut tape, false);
        let inputs: Vec<ValueId> = (0..batch.t_len())
            .map(|t| tape.leaf(batch.step_matrix(t)))
            .collect();
        let out = self.forward_steps(&mut tape, &ids, &inputs, batch.len())?;
        Ok(tape.value(out.logits).clone())
    }

    /// Fraction of sequences whose argmax logit matches the label.
    pub fn accuracy(&self, batch: &SequenceBatch) -> Result<f64> {
        let logits = self.logits(batch)?;
        let preds = logits.argmax_rows();
        let correct = preds
            .iter()
            .zip(batch.labels())
            .filter(|(p, l)| p == l)
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch() -> SequenceBatch {
        let data = vec![0.1, 0.2, 0.3, -0.1, -0.2, -0.3];
        SequenceBatch::new(3, 1, 2, data, vec![0, 1]).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let mut model = Classifier::init(
            &mut Rng::new(1),
            CellKind::Lstm,
            1,
            CellSizes::uniform(4),
            2,
        );
        model.head_w = Tensor::zeros(4, 2);
        model.head_b = Tensor::zeros(1, 2);
        let logits = model.logits(&toy_batch()).unwrap();
        assert_eq!(logits, Tensor::zeros(2, 2));
    }

    #[test]
    fn lmn_head_reads_memory_state() {
        let model = Classifier::init(
            &mut Rng::new(2),
            CellKind::Lmn,
            1,
            CellSizes {
                hidden: 3,
                functional: 3,
                memory: 5,
            },
            2,
        );
        assert_eq!(model.head_w.shape(), (5, 2));
        assert_eq!(model.cell.feed_width(), 8);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Classifier::init(
            &mut Rng::new(3),
            CellKind::Lmn,
            1,
            CellSizes::uniform(4),
            2,
        );
        let a = model.logits(&toy_batch()).unwrap();
        let b = model.logits(&toy_batch()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batched_rows_match_single_sequence_forward() {
        let model = Classifier::init(
            &mut Rng::new(4),
            CellKind::Lstm,
            1,
            CellSizes::uniform(4),
            2,
        );
        let batch = toy_batch();
        let batched = model.logits(&batch).unwrap();
        for i in 0..batch.len() {
            let single = model.logits(&batch.sequence(i)).unwrap();
            assert_eq!(single.data(), batched.row(i));
        }
    }

    #[test]
    fn named_order_matches_registration_order() {
        let model = Classifier::init(
            &mut Rng::new(5),
            CellKind::Lstm,
            2,
            CellSizes::uniform(3),
            2,
        );
        let mut tape = Tape::new();
        let ids = model.register(&mut tape, true);
        let ordered = ids.ordered();
        assert_eq!(ordered.len(), model.named().len());
        assert_eq!(tape.params(), ordered.as_slice());
        for (id, (_, tensor)) in ordered.iter().zip(model.named()) {
            assert_eq!(tape.value(*id).shape(), tensor.shape());
        }
    }
}
