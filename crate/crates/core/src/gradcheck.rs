//! Finite-difference gradient verification.
//!
//! Every differentiable building block is checked against central finite
//! differences (h = 1e-5) on small random instances in 64-bit precision.
//! The oracle rebuilds the forward pass from scratch for every probe, so it
//! shares no code with the backward pass it verifies. The same suite backs
//! the unit tests, the acceptance run and the `gradcheck` CLI subcommand.

use crate::autoenc::{mse_loss, Autoencoder};
use crate::cells::{lmn_unroll, lstm_unroll, orth_penalty, LmnIds, LstmIds};
use crate::data::SequenceBatch;
use crate::error::Result;
use crate::ewc::{ewc_penalty, FisherAnchor};
use crate::gim::GimModel;
use crate::model::{CellKind, CellSizes, Classifier};
use crate::numcore::{Rng, Tape, Tensor, ValueId};

const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Outcome of one gradient comparison.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} (max rel err {:.3e}, tolerance {:.1e})",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.tolerance
        )
    }
}

/// Relative error between aligned gradient sets, floored at 1e-6 so
/// near-zero FD noise does not blow up the ratio.
fn max_relative_error(analytic: &[Tensor], fd: &[Tensor]) -> f64 {
    let mut worst = 0.0f64;
    for (a, f) in analytic.iter().zip(fd) {
        for (&x, &y) in a.data().iter().zip(f.data()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

/// Checks a loss built on a tape from a flat list of parameter tensors.
/// `build` must be deterministic given the parameter values.
fn tape_check(
    name: &str,
    tensors: &[Tensor],
    build: impl Fn(&mut Tape, &[ValueId]) -> Result<ValueId>,
) -> Result<CheckResult> {
    // analytic gradients
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = tensors.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id).shape()))
        .collect();

    // central finite differences
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| tape.param(t)).collect();
        let loss = build(&mut tape, &ids)?;
        tape.scalar_value(loss)
    };
    let mut work = tensors.to_vec();
    let mut fd: Vec<Tensor> = tensors
        .iter()
        .map(|t| Tensor::zeros(t.shape().0, t.shape().1))
        .collect();
    for i in 0..work.len() {
        for e in 0..work[i].len() {
            work[i].data_mut()[e] += H;
            let f_plus = eval(&work)?;
            work[i].data_mut()[e] -= 2.0 * H;
            let f_minus = eval(&work)?;
            work[i].data_mut()[e] += H;
            fd[i].data_mut()[e] = (f_plus - f_minus) / (2.0 * H);
        }
    }

    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: max_relative_error(&analytic, &fd),
        tolerance: TOLERANCE,
    })
}

fn random_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.range(-0.8, 0.8)).collect(),
    )
    .expect("counted data")
}

/// Primitive-op checks at several random points each.
pub fn check_primitive_ops(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let points = 10;

    let worst_of = |name: &str,
                        f: &mut dyn FnMut(&mut Rng) -> Result<CheckResult>|
     -> Result<CheckResult> {
        let mut worst: Option<CheckResult> = None;
        for p in 0..points {
            let mut rng = Rng::new(seed ^ ((p as u64 + 1) * 7919));
            let r = f(&mut rng)?;
            worst = Some(match worst {
                Some(w) if w.max_rel_err >= r.max_rel_err => w,
                _ => CheckResult {
                    name: name.to_string(),
                    ..r
                },
            });
        }
        Ok(worst.expect("points > 0"))
    };

    out.push(worst_of("op::matmul", &mut |rng| {
        let a = random_tensor(rng, 2, 3);
        let b = random_tensor(rng, 3, 2);
        tape_check("op::matmul", &[a, b], |tape, ids| {
            let prod = tape.matmul(ids[0], ids[1])?;
            let sq = tape.square(prod);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::add", &mut |rng| {
        let a = random_tensor(rng, 2, 3);
        let b = random_tensor(rng, 2, 3);
        tape_check("op::add", &[a, b], |tape, ids| {
            let s = tape.add(ids[0], ids[1])?;
            let sq = tape.square(s);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::sub", &mut |rng| {
        let a = random_tensor(rng, 2, 3);
        let b = random_tensor(rng, 2, 3);
        tape_check("op::sub", &[a, b], |tape, ids| {
            let s = tape.sub(ids[0], ids[1])?;
            let sq = tape.square(s);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::mul", &mut |rng| {
        let a = random_tensor(rng, 2, 3);
        let b = random_tensor(rng, 2, 3);
        tape_check("op::mul", &[a, b], |tape, ids| {
            let s = tape.mul(ids[0], ids[1])?;
            let sq = tape.square(s);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::add_row", &mut |rng| {
        let a = random_tensor(rng, 3, 2);
        let bias = random_tensor(rng, 1, 2);
        tape_check("op::add_row", &[a, bias], |tape, ids| {
            let s = tape.add_row(ids[0], ids[1])?;
            let sq = tape.square(s);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::tanh", &mut |rng| {
        let x = random_tensor(rng, 2, 3);
        tape_check("op::tanh", &[x], |tape, ids| {
            let y = tape.tanh(ids[0]);
            let sq = tape.square(y);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::sigmoid", &mut |rng| {
        let x = random_tensor(rng, 2, 3);
        tape_check("op::sigmoid", &[x], |tape, ids| {
            let y = tape.sigmoid(ids[0]);
            let sq = tape.square(y);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::square", &mut |rng| {
        let x = random_tensor(rng, 2, 3);
        tape_check("op::square", &[x], |tape, ids| {
            let y = tape.square(ids[0]);
            let sq = tape.square(y);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::scale", &mut |rng| {
        let x = random_tensor(rng, 2, 3);
        tape_check("op::scale", &[x], |tape, ids| {
            let y = tape.scale(ids[0], 1.7);
            let sq = tape.square(y);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::transpose", &mut |rng| {
        let x = random_tensor(rng, 2, 3);
        let k = random_tensor(rng, 2, 2);
        tape_check("op::transpose", &[x], move |tape, ids| {
            let xt = tape.transpose(ids[0]);
            let k_id = tape.leaf(k.clone());
            let prod = tape.matmul(xt, k_id)?;
            let sq = tape.square(prod);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::concat_cols", &mut |rng| {
        let a = random_tensor(rng, 2, 2);
        let b = random_tensor(rng, 2, 3);
        let k = random_tensor(rng, 5, 2);
        tape_check("op::concat_cols", &[a, b], move |tape, ids| {
            let cat = tape.concat_cols(&[ids[0], ids[1]])?;
            let k_id = tape.leaf(k.clone());
            let prod = tape.matmul(cat, k_id)?;
            let sq = tape.square(prod);
            Ok(tape.sum(sq))
        })
    })?);

    out.push(worst_of("op::sum", &mut |rng| {
        let x = random_tensor(rng, 3, 2);
        tape_check("op::sum", &[x], |tape, ids| {
            let s = tape.sum(ids[0]);
            Ok(tape.square(s))
        })
    })?);

    out.push(worst_of("op::softmax_xent", &mut |rng| {
        let logits = random_tensor(rng, 3, 4);
        tape_check("op::softmax_xent", &[logits], |tape, ids| {
            tape.softmax_xent(ids[0], &[1, 0, 3])
        })
    })?);

    Ok(out)
}

fn random_batch(rng: &mut Rng, n: usize, t: usize, d: usize, classes: usize) -> SequenceBatch {
    let data = (0..n * t * d).map(|_| rng.range(-1.0, 1.0)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    SequenceBatch::new(t, d, classes, data, labels).expect("counted data")
}

/// LSTM cell unrolled five steps; loss is the squared magnitude of every
/// per-step output.
pub fn check_lstm_cell(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let p = crate::cells::LstmParams::init(&mut rng, 3, 4);
    let batch = random_batch(&mut rng, 2, 5, 3, 2);
    let tensors: Vec<Tensor> = p.named().into_iter().map(|(_, t)| t.clone()).collect();
    tape_check("lstm_cell_T5", &tensors, move |tape, ids| {
        let cell = LstmIds::from_ordered(ids);
        let inputs: Vec<ValueId> = (0..batch.t_len())
            .map(|t| tape.leaf(batch.step_matrix(t)))
            .collect();
        let trace = lstm_unroll(tape, &cell, &inputs, batch.len(), 4)?;
        let mut acc: Option<ValueId> = None;
        for h in trace.hs {
            let sq = tape.square(h);
            let s = tape.sum(sq);
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
        Ok(acc.expect("T >= 1"))
    })
}

/// LMN cell (4 functional, 4 memory units) unrolled five steps.
pub fn check_lmn_cell(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let p = crate::cells::LmnParams::init(&mut rng, 3, 4, 4);
    let batch = random_batch(&mut rng, 2, 5, 3, 2);
    let tensors: Vec<Tensor> = p.named().into_iter().map(|(_, t)| t.clone()).collect();
    tape_check("lmn_cell_T5", &tensors, move |tape, ids| {
        let cell = LmnIds::from_ordered(ids);
        let inputs: Vec<ValueId> = (0..batch.t_len())
            .map(|t| tape.leaf(batch.step_matrix(t)))
            .collect();
        let trace = lmn_unroll(tape, &cell, &inputs, batch.len(), 4)?;
        let mut acc: Option<ValueId> = None;
        for v in trace.hs.into_iter().chain(trace.ms) {
            let sq = tape.square(v);
            let s = tape.sum(sq);
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
        Ok(acc.expect("T >= 1"))
    })
}

/// Autoencoder reconstruction MSE on a 2-unit model, T=3.
pub fn check_autoencoder(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let ae = Autoencoder::init(&mut rng, 2, 2, 0);
    let batch = random_batch(&mut rng, 2, 3, 2, 1);

    // analytic through the real reconstruction path
    let mut tape = Tape::new();
    let ids = ae.register(&mut tape, true);
    let inputs: Vec<ValueId> = (0..batch.t_len())
        .map(|t| tape.leaf(batch.step_matrix(t)))
        .collect();
    let recon = ae.reconstruct_steps(&mut tape, &ids, &inputs, batch.len())?;
    let loss = mse_loss(&mut tape, &recon, &inputs)?;
    let grads = tape.backward(loss)?;
    let ordered = ids.ordered();
    let analytic: Vec<Tensor> = ordered
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id).shape()))
        .collect();

    // finite differences over a working copy
    let eval = |ae: &Autoencoder| -> Result<f64> {
        let mut tape = Tape::new();
        let ids = ae.register(&mut tape, false);
        let inputs: Vec<ValueId> = (0..batch.t_len())
            .map(|t| tape.leaf(batch.step_matrix(t)))
            .collect();
        let recon = ae.reconstruct_steps(&mut tape, &ids, &inputs, batch.len())?;
        let loss = mse_loss(&mut tape, &recon, &inputs)?;
        tape.scalar_value(loss)
    };
    let mut work = ae.clone();
    let shapes: Vec<(usize, usize)> = work.tensors_mut().iter().map(|t| t.shape()).collect();
    let mut fd: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
    #[allow(clippy::needless_range_loop)]
    for i in 0..shapes.len() {
        for e in 0..fd[i].len() {
            work.tensors_mut()[i].data_mut()[e] += H;
            let f_plus = eval(&work)?;
            work.tensors_mut()[i].data_mut()[e] -= 2.0 * H;
            let f_minus = eval(&work)?;
            work.tensors_mut()[i].data_mut()[e] += H;
            fd[i].data_mut()[e] = (f_plus - f_minus) / (2.0 * H);
        }
    }

    Ok(CheckResult {
        name: "autoencoder_T3".to_string(),
        max_rel_err: max_relative_error(&analytic, &fd),
        tolerance: TOLERANCE,
    })
}

/// Two-module GIM stack: cross-entropy gradients of the unfrozen second
/// module, with the first module frozen.
pub fn check_gim_stack(kind: CellKind, seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let mut model = GimModel::new(kind, 2, 2, CellSizes::uniform(2), 2);
    model.add_module(&mut rng);
    model.add_module(&mut rng);
    let batch = random_batch(&mut rng, 2, 3, 2, 2);

    let loss_of = |model: &GimModel| -> Result<f64> {
        let mut tape = Tape::new();
        let logits = model.forward_on_tape(&mut tape, &batch, 2)?;
        let loss = tape.softmax_xent(logits, batch.labels())?;
        tape.scalar_value(loss)
    };

    // analytic: only module 2 registers trainable parameters
    let mut tape = Tape::new();
    let logits = model.forward_on_tape(&mut tape, &batch, 2)?;
    let loss = tape.softmax_xent(logits, batch.labels())?;
    let grads = tape.backward(loss)?;
    let param_ids = tape.params().to_vec();
    let analytic: Vec<Tensor> = param_ids
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id).shape()))
        .collect();

    let shapes: Vec<(usize, usize)> = model.modules[1]
        .net
        .tensors_mut()
        .iter()
        .map(|t| t.shape())
        .collect();
    assert_eq!(shapes.len(), analytic.len());
    let mut fd: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
    #[allow(clippy::needless_range_loop)]
    for i in 0..shapes.len() {
        for e in 0..fd[i].len() {
            model.modules[1].net.tensors_mut()[i].data_mut()[e] += H;
            let f_plus = loss_of(&model)?;
            model.modules[1].net.tensors_mut()[i].data_mut()[e] -= 2.0 * H;
            let f_minus = loss_of(&model)?;
            model.modules[1].net.tensors_mut()[i].data_mut()[e] += H;
            fd[i].data_mut()[e] = (f_plus - f_minus) / (2.0 * H);
        }
    }

    let name = match kind {
        CellKind::Lstm => "gim_lstm_stack_n2",
        CellKind::Lmn => "gim_lmn_stack_n2",
    };
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: max_relative_error(&analytic, &fd),
        tolerance: TOLERANCE,
    })
}

/// EWC quadratic penalty against two random anchors.
pub fn check_ewc_penalty(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let model = Classifier::init(&mut rng, CellKind::Lstm, 2, CellSizes::uniform(2), 2);
    let tensors: Vec<Tensor> = model.named().into_iter().map(|(_, t)| t.clone()).collect();
    let make_anchor = |rng: &mut Rng, subtask: usize| FisherAnchor {
        fisher: tensors
            .iter()
            .map(|t| {
                let mut f = t.clone();
                for v in f.data_mut() {
                    *v = rng.range(0.0, 2.0);
                }
                f
            })
            .collect(),
        anchor: tensors
            .iter()
            .map(|t| {
                let mut a = t.clone();
                for v in a.data_mut() {
                    *v += rng.range(-0.5, 0.5);
                }
                a
            })
            .collect(),
        subtask,
    };
    let anchors = vec![make_anchor(&mut rng, 0), make_anchor(&mut rng, 1)];
    tape_check("ewc_penalty", &tensors, move |tape, ids| {
        ewc_penalty(tape, ids, &anchors, 0.4)
    })
}

/// Orthogonality penalty β‖WᵀW − I‖².
pub fn check_orth_penalty(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let w = random_tensor(&mut rng, 4, 4);
    tape_check("orth_penalty", &[w], |tape, ids| {
        orth_penalty(tape, ids[0], 0.1)
    })
}

/// The full suite behind acceptance criterion coverage and the CLI.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = check_primitive_ops(seed)?;
    results.push(check_lstm_cell(seed + 1)?);
    results.push(check_lmn_cell(seed + 2)?);
    results.push(check_autoencoder(seed + 3)?);
    results.push(check_gim_stack(CellKind::Lstm, seed + 4)?);
    results.push(check_gim_stack(CellKind::Lmn, seed + 5)?);
    results.push(check_ewc_penalty(seed + 6)?);
    results.push(check_orth_penalty(seed + 7)?);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_ops_match_finite_differences() {
        for r in check_primitive_ops(417).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn lstm_cell_matches_finite_differences() {
        let r = check_lstm_cell(11).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn lmn_cell_matches_finite_differences() {
        let r = check_lmn_cell(12).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn autoencoder_matches_finite_differences() {
        let r = check_autoencoder(13).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn gim_stacks_match_finite_differences() {
        let r = check_gim_stack(CellKind::Lstm, 14).unwrap();
        assert!(r.passed(), "{r}");
        let r = check_gim_stack(CellKind::Lmn, 15).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn penalties_match_finite_differences() {
        let r = check_ewc_penalty(16).unwrap();
        assert!(r.passed(), "{r}");
        let r = check_orth_penalty(17).unwrap();
        assert!(r.passed(), "{r}");
    }
}
