//! Recurrent cells: LSTM and the Linear Memory Network (LMN).
//!
//! The LMN splits its state into a nonlinear functional activation `h` and a
//! strictly linear memory `m`:
//!
//! ```text
//! h_t = tanh(W_xh x_t + W_mh m_{t-1})
//! m_t = W_hm h_t + W_mm m_{t-1}
//! ```
//!
//! The memory update carries no nonlinearity, so `m_t` is an affine function
//! of `m_{t-1}` for fixed `h_t`. The memory transition `W_mm` is initialized
//! orthogonal and can be kept near-orthogonal during training through
//! [`orth_penalty`].
//!
//! All step functions operate on tape values so that unrolled sequences are
//! differentiable end to end.

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tape, Tensor, ValueId};

/// Glorot-style uniform init in ±sqrt(6 / (fan_in + fan_out)).
fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.range(-bound, bound)).collect();
    Tensor::new(rows, cols, data).expect("counted data")
}

/// LSTM parameters with one input-to-hidden matrix, one hidden-to-hidden
/// matrix and one bias per gate (input i, forget f, candidate g, output o).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_xi: Tensor,
    pub w_hi: Tensor,
    pub b_i: Tensor,
    pub w_xf: Tensor,
    pub w_hf: Tensor,
    pub b_f: Tensor,
    pub w_xg: Tensor,
    pub w_hg: Tensor,
    pub b_g: Tensor,
    pub w_xo: Tensor,
    pub w_ho: Tensor,
    pub b_o: Tensor,
}

impl LstmParams {
    /// Random init: Glorot-uniform weights, zero biases except the forget
    /// gate bias which starts at 1.0.
    pub fn init(rng: &mut Rng, input_size: usize, hidden_size: usize) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        p.w_xi = glorot(rng, input_size, hidden_size);
        p.w_hi = glorot(rng, hidden_size, hidden_size);
        p.w_xf = glorot(rng, input_size, hidden_size);
        p.w_hf = glorot(rng, hidden_size, hidden_size);
        p.b_f = Tensor::filled(1, hidden_size, 1.0);
        p.w_xg = glorot(rng, input_size, hidden_size);
        p.w_hg = glorot(rng, hidden_size, hidden_size);
        p.w_xo = glorot(rng, input_size, hidden_size);
        p.w_ho = glorot(rng, hidden_size, hidden_size);
        p
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmParams {
            input_size,
            hidden_size,
            w_xi: Tensor::zeros(input_size, hidden_size),
            w_hi: Tensor::zeros(hidden_size, hidden_size),
            b_i: Tensor::zeros(1, hidden_size),
            w_xf: Tensor::zeros(input_size, hidden_size),
            w_hf: Tensor::zeros(hidden_size, hidden_size),
            b_f: Tensor::zeros(1, hidden_size),
            w_xg: Tensor::zeros(input_size, hidden_size),
            w_hg: Tensor::zeros(hidden_size, hidden_size),
            b_g: Tensor::zeros(1, hidden_size),
            w_xo: Tensor::zeros(input_size, hidden_size),
            w_ho: Tensor::zeros(hidden_size, hidden_size),
            b_o: Tensor::zeros(1, hidden_size),
        }
    }

    /// Parameter tensors with stable names, in a fixed order shared by
    /// gradients, optimizers, Fisher estimates and checkpoints.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_xi", &self.w_xi),
            ("w_hi", &self.w_hi),
            ("b_i", &self.b_i),
            ("w_xf", &self.w_xf),
            ("w_hf", &self.w_hf),
            ("b_f", &self.b_f),
            ("w_xg", &self.w_xg),
            ("w_hg", &self.w_hg),
            ("b_g", &self.b_g),
            ("w_xo", &self.w_xo),
            ("w_ho", &self.w_ho),
            ("b_o", &self.b_o),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_xi,
            &mut self.w_hi,
            &mut self.b_i,
            &mut self.w_xf,
            &mut self.w_hf,
            &mut self.b_f,
            &mut self.w_xg,
            &mut self.w_hg,
            &mut self.b_g,
            &mut self.w_xo,
            &mut self.w_ho,
            &mut self.b_o,
        ]
    }

    /// Puts every parameter on the tape. Trainable parameters are registered
    /// for gradient collection; frozen ones become constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LstmIds {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.leaf(t.clone())
            }
        };
        LstmIds {
            w_xi: reg(&self.w_xi),
            w_hi: reg(&self.w_hi),
            b_i: reg(&self.b_i),
            w_xf: reg(&self.w_xf),
            w_hf: reg(&self.w_hf),
            b_f: reg(&self.b_f),
            w_xg: reg(&self.w_xg),
            w_hg: reg(&self.w_hg),
            b_g: reg(&self.b_g),
            w_xo: reg(&self.w_xo),
            w_ho: reg(&self.w_ho),
            b_o: reg(&self.b_o),
        }
    }
}

/// Tape locations of LSTM parameters, mirroring [`LstmParams`].
#[derive(Clone, Copy, Debug)]
pub struct LstmIds {
    pub w_xi: ValueId,
    pub w_hi: ValueId,
    pub b_i: ValueId,
    pub w_xf: ValueId,
    pub w_hf: ValueId,
    pub b_f: ValueId,
    pub w_xg: ValueId,
    pub w_hg: ValueId,
    pub b_g: ValueId,
    pub w_xo: ValueId,
    pub w_ho: ValueId,
    pub b_o: ValueId,
}

impl LstmIds {
    /// Ids in the same order as [`LstmParams::named`].
    pub fn ordered(&self) -> Vec<ValueId> {
        vec![
            self.w_xi, self.w_hi, self.b_i, self.w_xf, self.w_hf, self.b_f, self.w_xg, self.w_hg,
            self.b_g, self.w_xo, self.w_ho, self.b_o,
        ]
    }

    /// Rebuilds the struct from ids in [`LstmIds::ordered`] order.
    pub fn from_ordered(ids: &[ValueId]) -> Self {
        assert_eq!(ids.len(), 12);
        LstmIds {
            w_xi: ids[0],
            w_hi: ids[1],
            b_i: ids[2],
            w_xf: ids[3],
            w_hf: ids[4],
            b_f: ids[5],
            w_xg: ids[6],
            w_hg: ids[7],
            b_g: ids[8],
            w_xo: ids[9],
            w_ho: ids[10],
            b_o: ids[11],
        }
    }
}

/// LSTM per-step state: hidden activation and cell.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: ValueId,
    pub c: ValueId,
}

/// LMN parameters. The memory transition `w_mm` is square and orthogonal at
/// initialization. The paper's equations carry no bias terms and none are
/// used here.
#[derive(Clone, Debug, PartialEq)]
pub struct LmnParams {
    pub input_size: usize,
    pub functional_size: usize,
    pub memory_size: usize,
    /// input → functional
    pub w_xh: Tensor,
    /// memory → functional
    pub w_mh: Tensor,
    /// functional → memory
    pub w_hm: Tensor,
    /// memory → memory (orthogonal at init)
    pub w_mm: Tensor,
}

impl LmnParams {
    pub fn init(
        rng: &mut Rng,
        input_size: usize,
        functional_size: usize,
        memory_size: usize,
    ) -> Self {
        LmnParams {
            input_size,
            functional_size,
            memory_size,
            w_xh: glorot(rng, input_size, functional_size),
            w_mh: glorot(rng, memory_size, functional_size),
            w_hm: glorot(rng, functional_size, memory_size),
            w_mm: orthogonal_init(rng, memory_size).expect("memory_size >= 1"),
        }
    }

    pub fn zeros(input_size: usize, functional_size: usize, memory_size: usize) -> Self {
        LmnParams {
            input_size,
            functional_size,
            memory_size,
            w_xh: Tensor::zeros(input_size, functional_size),
            w_mh: Tensor::zeros(memory_size, functional_size),
            w_hm: Tensor::zeros(functional_size, memory_size),
            w_mm: Tensor::zeros(memory_size, memory_size),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_xh", &self.w_xh),
            ("w_mh", &self.w_mh),
            ("w_hm", &self.w_hm),
            ("w_mm", &self.w_mm),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_xh,
            &mut self.w_mh,
            &mut self.w_hm,
            &mut self.w_mm,
        ]
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LmnIds {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.leaf(t.clone())
            }
        };
        LmnIds {
            w_xh: reg(&self.w_xh),
            w_mh: reg(&self.w_mh),
            w_hm: reg(&self.w_hm),
            w_mm: reg(&self.w_mm),
        }
    }
}

/// Tape locations of LMN parameters, mirroring [`LmnParams`].
#[derive(Clone, Copy, Debug)]
pub struct LmnIds {
    pub w_xh: ValueId,
    pub w_mh: ValueId,
    pub w_hm: ValueId,
    pub w_mm: ValueId,
}

impl LmnIds {
    pub fn ordered(&self) -> Vec<ValueId> {
        vec![self.w_xh, self.w_mh, self.w_hm, self.w_mm]
    }

    /// Rebuilds the struct from ids in [`LmnIds::ordered`] order.
    pub fn from_ordered(ids: &[ValueId]) -> Self {
        assert_eq!(ids.len(), 4);
        LmnIds {
            w_xh: ids[0],
            w_mh: ids[1],
            w_hm: ids[2],
            w_mm: ids[3],
        }
    }
}

/// One LSTM step over a [batch × input] slice. Returns the new state; `h` of
/// the state is the step output.
pub fn lstm_step(
    tape: &mut Tape,
    p: &LstmIds,
    x_t: ValueId,
    state: LstmState,
) -> Result<LstmState> {
    let gate = |tape: &mut Tape, wx, wh, b| -> Result<ValueId> {
        let xs = tape.matmul(x_t, wx)?;
        let hs = tape.matmul(state.h, wh)?;
        let pre = tape.add(xs, hs)?;
        tape.add_row(pre, b)
    };
    let i_pre = gate(tape, p.w_xi, p.w_hi, p.b_i)?;
    let f_pre = gate(tape, p.w_xf, p.w_hf, p.b_f)?;
    let g_pre = gate(tape, p.w_xg, p.w_hg, p.b_g)?;
    let o_pre = gate(tape, p.w_xo, p.w_ho, p.b_o)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, state.c)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let c_squashed = tape.tanh(c);
    let h = tape.mul(o, c_squashed)?;
    Ok(LstmState { h, c })
}

/// One LMN step. Returns `(h, m)`: the functional activation and the new
/// memory state. The memory update is strictly linear.
pub fn lmn_step(
    tape: &mut Tape,
    p: &LmnIds,
    x_t: ValueId,
    m_prev: ValueId,
) -> Result<(ValueId, ValueId)> {
    let xh = tape.matmul(x_t, p.w_xh)?;
    let mh = tape.matmul(m_prev, p.w_mh)?;
    let pre = tape.add(xh, mh)?;
    let h = tape.tanh(pre);
    let hm = tape.matmul(h, p.w_hm)?;
    let mm = tape.matmul(m_prev, p.w_mm)?;
    let m = tape.add(hm, mm)?;
    Ok((h, m))
}

/// Per-step activations of an unrolled LSTM.
pub struct LstmTrace {
    /// h_1..h_T
    pub hs: Vec<ValueId>,
    pub final_state: LstmState,
}

/// Per-step activations of an unrolled LMN.
pub struct LmnTrace {
    /// h_1..h_T (functional activations)
    pub hs: Vec<ValueId>,
    /// m_1..m_T (memory states)
    pub ms: Vec<ValueId>,
    pub final_m: ValueId,
}

/// Unrolls an LSTM over per-step input nodes, starting from zero state.
pub fn lstm_unroll(
    tape: &mut Tape,
    p: &LstmIds,
    inputs: &[ValueId],
    batch: usize,
    hidden: usize,
) -> Result<LstmTrace> {
    if inputs.is_empty() {
        return Err(Error::validation("unroll over an empty sequence"));
    }
    let h0 = tape.leaf(Tensor::zeros(batch, hidden));
    let c0 = tape.leaf(Tensor::zeros(batch, hidden));
    let mut state = LstmState { h: h0, c: c0 };
    let mut hs = Vec::with_capacity(inputs.len());
    for &x_t in inputs {
        state = lstm_step(tape, p, x_t, state)?;
        hs.push(state.h);
    }
    Ok(LstmTrace {
        hs,
        final_state: state,
    })
}

/// Unrolls an LMN over per-step input nodes, starting from zero memory.
pub fn lmn_unroll(
    tape: &mut Tape,
    p: &LmnIds,
    inputs: &[ValueId],
    batch: usize,
    memory: usize,
) -> Result<LmnTrace> {
    if inputs.is_empty() {
        return Err(Error::validation("unroll over an empty sequence"));
    }
    let mut m = tape.leaf(Tensor::zeros(batch, memory));
    let mut hs = Vec::with_capacity(inputs.len());
    let mut ms = Vec::with_capacity(inputs.len());
    for &x_t in inputs {
        let (h, m_next) = lmn_step(tape, p, x_t, m)?;
        hs.push(h);
        ms.push(m_next);
        m = m_next;
    }
    Ok(LmnTrace { hs, ms, final_m: m })
}

/// Random n×n orthogonal matrix: a Gaussian draw orthogonalized by
/// modified Gram–Schmidt with a second re-orthogonalization pass, column
/// signs fixed so the implied R has a positive diagonal.
pub fn orthogonal_init(rng: &mut Rng, n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::validation("orthogonal_init requires n >= 1"));
    }
    // Columns of the Gaussian draw.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.normal()).collect())
        .collect();
    for _pass in 0..2 {
        for j in 0..n {
            let (head, tail) = cols.split_at_mut(j);
            let col_j = &mut tail[0];
            for col_k in head.iter() {
                let dot: f64 = col_j.iter().zip(col_k.iter()).map(|(a, b)| a * b).sum();
                for (a, &b) in col_j.iter_mut().zip(col_k) {
                    *a -= dot * b;
                }
            }
            let norm: f64 = col_j.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                // A Gaussian draw is singular with probability zero; one
                // fresh draw is plenty if it ever happens.
                return orthogonal_init(rng, n);
            }
            for v in col_j.iter_mut() {
                *v /= norm;
            }
        }
    }
    let mut q = Tensor::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q.data_mut()[i * n + j] = v;
        }
    }
    Ok(q)
}

/// Deviation of a square matrix from orthogonality: ‖WᵀW − I‖_F.
pub fn orthogonality_error(w: &Tensor) -> Result<f64> {
    if w.rows() != w.cols() {
        return Err(Error::ShapeMismatch {
            op: "orthogonality_error",
            lhs: w.shape(),
            rhs: (w.cols(), w.cols()),
        });
    }
    let wtw = w.transpose().matmul(w)?;
    let diff = wtw.sub(&Tensor::identity(w.rows()))?;
    Ok(diff.frob_norm())
}

/// Orthogonality-preserving penalty β‖WᵀW − I‖², recorded on the tape so it
/// is differentiable and can be added to a task loss.
pub fn orth_penalty(tape: &mut Tape, w: ValueId, beta: f64) -> Result<ValueId> {
    let (rows, cols) = tape.value(w).shape();
    if rows != cols {
        return Err(Error::ShapeMismatch {
            op: "orth_penalty",
            lhs: (rows, cols),
            rhs: (cols, cols),
        });
    }
    if beta < 0.0 {
        return Err(Error::validation("orth_penalty requires beta >= 0"));
    }
    let wt = tape.transpose(w);
    let wtw = tape.matmul(wt, w)?;
    let id = tape.leaf(Tensor::identity(rows));
    let diff = tape.sub(wtw, id)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_lstm_state(p: &LstmParams, x: Tensor, h0: Tensor, c0: Tensor) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let ids = p.register(&mut tape, false);
        let x_id = tape.leaf(x);
        let state = LstmState {
            h: tape.leaf(h0),
            c: tape.leaf(c0),
        };
        let out = lstm_step(&mut tape, &ids, x_id, state).unwrap();
        (tape.value(out.h).clone(), tape.value(out.c).clone())
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let p = LstmParams::zeros(3, 2);
        let x = Tensor::from_rows(&[vec![0.7, -1.0, 2.0]]).unwrap();
        let (h, c) = single_lstm_state(&p, x, Tensor::zeros(1, 2), Tensor::zeros(1, 2));
        assert_eq!(c, Tensor::zeros(1, 2));
        assert_eq!(h, Tensor::zeros(1, 2));
    }

    #[test]
    fn lstm_zero_params_unit_cell() {
        // gates 0.5, c1 = 0.5*1 + 0.5*0 = 0.5, h1 = 0.5*tanh(0.5)
        let p = LstmParams::zeros(1, 1);
        let x = Tensor::scalar(3.0);
        let (h, c) = single_lstm_state(&p, x, Tensor::zeros(1, 1), Tensor::scalar(1.0));
        assert!((c.data()[0] - 0.5).abs() < 1e-15);
        let expected = 0.5 * 0.5f64.tanh();
        assert!((h.data()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.2311).abs() < 1e-4);
    }

    #[test]
    fn lstm_step_is_pure() {
        let mut rng = Rng::new(9);
        let p = LstmParams::init(&mut rng, 2, 3);
        let x = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let h0 = Tensor::from_rows(&[vec![0.1, -0.2, 0.3]]).unwrap();
        let c0 = Tensor::from_rows(&[vec![0.5, 0.5, -0.5]]).unwrap();
        let (h1, c1) = single_lstm_state(&p, x.clone(), h0.clone(), c0.clone());
        let (h2, c2) = single_lstm_state(&p, x, h0, c0);
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
    }

    fn single_lmn_state(p: &LmnParams, x: Tensor, m0: Tensor) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let ids = p.register(&mut tape, false);
        let x_id = tape.leaf(x);
        let m_id = tape.leaf(m0);
        let (h, m) = lmn_step(&mut tape, &ids, x_id, m_id).unwrap();
        (tape.value(h).clone(), tape.value(m).clone())
    }

    #[test]
    fn lmn_zero_params() {
        let p = LmnParams::zeros(2, 3, 4);
        let x = Tensor::from_rows(&[vec![5.0, -5.0]]).unwrap();
        let (h, m) = single_lmn_state(&p, x, Tensor::zeros(1, 4));
        assert_eq!(h, Tensor::zeros(1, 3));
        assert_eq!(m, Tensor::zeros(1, 4));
    }

    #[test]
    fn lmn_scalar_ones() {
        // h = tanh(1), m = h
        let mut p = LmnParams::zeros(1, 1, 1);
        p.w_xh = Tensor::scalar(1.0);
        p.w_mh = Tensor::scalar(1.0);
        p.w_hm = Tensor::scalar(1.0);
        p.w_mm = Tensor::scalar(1.0);
        let (h, m) = single_lmn_state(&p, Tensor::scalar(1.0), Tensor::zeros(1, 1));
        let expected = 1.0f64.tanh();
        assert!((h.data()[0] - expected).abs() < 1e-15);
        assert!((m.data()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn lmn_identity_memory_persists() {
        let mut rng = Rng::new(4);
        let mut p = LmnParams::init(&mut rng, 2, 3, 3);
        p.w_hm = Tensor::zeros(3, 3);
        p.w_mm = Tensor::identity(3);
        let m0 = Tensor::from_rows(&[vec![0.3, -1.2, 0.9]]).unwrap();
        let mut m = m0.clone();
        for step in 0..4 {
            let x = Tensor::from_rows(&[vec![step as f64, -1.0]]).unwrap();
            let (_, m_next) = single_lmn_state(&p, x, m);
            m = m_next;
        }
        assert_eq!(m, m0);
    }

    #[test]
    fn lmn_memory_update_is_linear_superposition() {
        // With the W_hm h contribution subtracted, m_t is linear in m_{t-1}.
        let mut rng = Rng::new(21);
        let p = LmnParams::init(&mut rng, 2, 3, 3);
        let x = Tensor::from_rows(&[vec![0.4, -0.7]]).unwrap();
        let a = Tensor::from_rows(&[vec![0.3, 0.1, -0.2]]).unwrap();
        let b = Tensor::from_rows(&[vec![-1.0, 0.5, 0.8]]).unwrap();
        let (alpha, beta) = (1.7, -0.6);

        // Memory-only map: m -> m W_mm (the W_hm h term removed).
        let mem_map = |m: &Tensor| m.matmul(&p.w_mm).unwrap();
        let combo = a.scale(alpha).add(&b.scale(beta)).unwrap();
        let lhs = mem_map(&combo);
        let rhs = mem_map(&a)
            .scale(alpha)
            .add(&mem_map(&b).scale(beta))
            .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-12);
        }

        // And the full step minus the W_hm h term equals the memory-only map.
        let (h, m_full) = single_lmn_state(&p, x, a.clone());
        let hm = h.matmul(&p.w_hm).unwrap();
        let linear_part = m_full.sub(&hm).unwrap();
        for (l, r) in linear_part.data().iter().zip(mem_map(&a).data()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn unroll_t1_equals_single_step() {
        let mut rng = Rng::new(2);
        let p = LstmParams::init(&mut rng, 2, 3);
        let x = Tensor::from_rows(&[vec![0.2, -0.4]]).unwrap();

        let mut tape = Tape::new();
        let ids = p.register(&mut tape, false);
        let x_id = tape.leaf(x.clone());
        let trace = lstm_unroll(&mut tape, &ids, &[x_id], 1, 3).unwrap();
        let unrolled = tape.value(trace.final_state.h).clone();

        let (h, _) = single_lstm_state(&p, x, Tensor::zeros(1, 3), Tensor::zeros(1, 3));
        assert_eq!(unrolled, h);
    }

    #[test]
    fn unroll_rejects_empty_sequence() {
        let p = LstmParams::zeros(1, 1);
        let mut tape = Tape::new();
        let ids = p.register(&mut tape, false);
        assert!(matches!(
            lstm_unroll(&mut tape, &ids, &[], 1, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn lmn_with_zero_input_weights_ignores_input() {
        let mut rng = Rng::new(17);
        let mut p = LmnParams::init(&mut rng, 2, 3, 3);
        p.w_xh = Tensor::zeros(2, 3);
        let run = |scalars: [f64; 3]| {
            let mut tape = Tape::new();
            let ids = p.register(&mut tape, false);
            let xs: Vec<ValueId> = scalars
                .iter()
                .map(|&v| tape.leaf(Tensor::from_rows(&[vec![v, -v]]).unwrap()))
                .collect();
            let trace = lmn_unroll(&mut tape, &ids, &xs, 1, 3).unwrap();
            tape.value(trace.final_m).clone()
        };
        assert_eq!(run([1.0, 2.0, 3.0]), run([-9.0, 0.5, 100.0]));
    }

    #[test]
    fn orthogonal_init_is_orthogonal() {
        let mut rng = Rng::new(33);
        for n in [1, 2, 5, 16, 64] {
            let q = orthogonal_init(&mut rng, n).unwrap();
            let err = orthogonality_error(&q).unwrap();
            assert!(err <= 1e-5, "n={n} err={err}");
        }
    }

    #[test]
    fn orthogonal_init_n1_is_sign() {
        let mut rng = Rng::new(1);
        let q = orthogonal_init(&mut rng, 1).unwrap();
        assert!((q.data()[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_init_rejects_n0_and_is_deterministic() {
        let mut rng = Rng::new(8);
        assert!(orthogonal_init(&mut rng, 0).is_err());
        let a = orthogonal_init(&mut Rng::new(12), 6).unwrap();
        let b = orthogonal_init(&mut Rng::new(12), 6).unwrap();
        let c = orthogonal_init(&mut Rng::new(13), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn orth_penalty_zero_on_orthogonal() {
        let mut rng = Rng::new(5);
        let q = orthogonal_init(&mut rng, 4).unwrap();
        for beta in [0.0, 0.1, 1.0, 7.5] {
            let mut tape = Tape::new();
            let w = tape.leaf(q.clone());
            let p = orth_penalty(&mut tape, w, beta).unwrap();
            assert!(tape.scalar_value(p).unwrap() < 1e-9);
        }
    }

    #[test]
    fn orth_penalty_hand_values() {
        // W = [[2]], beta = 0.1: 0.1 * (4-1)^2 = 0.9
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(2.0));
        let p = orth_penalty(&mut tape, w, 0.1).unwrap();
        assert!((tape.scalar_value(p).unwrap() - 0.9).abs() < 1e-12);

        // W = 0 (n×n), beta = 1: ‖-I‖_F² = n
        for n in [1, 3, 6] {
            let mut tape = Tape::new();
            let w = tape.leaf(Tensor::zeros(n, n));
            let p = orth_penalty(&mut tape, w, 1.0).unwrap();
            assert!((tape.scalar_value(p).unwrap() - n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn orth_penalty_rejects_non_square() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(2, 3));
        assert!(orth_penalty(&mut tape, w, 0.1).is_err());
    }
}
