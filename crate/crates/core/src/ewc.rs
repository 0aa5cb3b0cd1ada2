//! Elastic Weight Consolidation for recurrent classifiers.
//!
//! After a subtask finishes, the diagonal of the (empirical) Fisher
//! information matrix is estimated from per-sequence gradients of the
//! log-likelihood at the true labels, together with a snapshot of the
//! parameters. Later subtasks add the quadratic penalty
//!
//! ```text
//! Σ_anchors Σ_i (λ/2) F_i (θ_i − θ*_i)²
//! ```
//!
//! to the task loss, pulling important parameters back toward their anchor.
//! The model stays monolithic: no module growth, one anchor per completed
//! subtask.

use crate::data::{iterate_batches, SequenceBatch};
use crate::error::{Error, Result};
use crate::gim::{EpochStats, TrainConfig, TrainingLog};
use crate::model::{CellIds, Classifier};
use crate::numcore::{clip_global_norm, Optimizer, Rng, Tape, Tensor, ValueId};

/// Per-parameter importances plus the anchor snapshot for one completed
/// subtask. Both vectors align with [`Classifier::named`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherAnchor {
    pub fisher: Vec<Tensor>,
    pub anchor: Vec<Tensor>,
    pub subtask: usize,
}

/// EWC hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct EwcConfig {
    /// Penalty weight λ; any value ≥ 0 is accepted.
    pub lambda: f64,
    /// Number of sequences used to estimate the Fisher diagonal.
    pub fisher_sample_count: usize,
}

impl Default for EwcConfig {
    fn default() -> Self {
        EwcConfig {
            lambda: 0.4,
            fisher_sample_count: 256,
        }
    }
}

/// Estimates the Fisher diagonal from the first `count` sequences of `data`:
/// the mean over sequences of the squared gradient of log p(y|x; θ) at the
/// true label. Also snapshots the current parameters as the anchor.
pub fn fisher_diag(
    model: &Classifier,
    data: &SequenceBatch,
    count: usize,
    subtask: usize,
) -> Result<FisherAnchor> {
    if count == 0 || data.is_empty() {
        return Err(Error::validation("fisher_diag over an empty sample"));
    }
    if count > data.len() {
        return Err(Error::validation(format!(
            "fisher sample count {count} exceeds {} available sequences",
            data.len()
        )));
    }
    let mut sums: Vec<Tensor> = model
        .named()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape().0, t.shape().1))
        .collect();
    for i in 0..count {
        let seq = data.sequence(i);
        let mut tape = Tape::new();
        let ids = model.register(&mut tape, true);
        let inputs: Vec<ValueId> = (0..seq.t_len())
            .map(|t| tape.leaf(seq.step_matrix(t)))
            .collect();
        let out = model.forward_steps(&mut tape, &ids, &inputs, 1)?;
        // Cross entropy of one sample is −log p(y|x; θ); its gradient is the
        // negative of the log-likelihood gradient, so the squares agree.
        let loss = tape.softmax_xent(out.logits, seq.labels())?;
        let grads = tape.backward(loss)?;
        for (sum, &id) in sums.iter_mut().zip(&ids.ordered()) {
            let g = grads.get_or_zeros(id, tape.value(id).shape());
            for (s, &v) in sum.data_mut().iter_mut().zip(g.data()) {
                *s += v * v;
            }
        }
    }
    let scale = 1.0 / count as f64;
    for t in sums.iter_mut() {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    Ok(FisherAnchor {
        fisher: sums,
        anchor: model.snapshot(),
        subtask,
    })
}

/// Traced EWC penalty over the registered parameter ids `current`, which
/// must align with every anchor's layout.
pub fn ewc_penalty(
    tape: &mut Tape,
    current: &[ValueId],
    anchors: &[FisherAnchor],
    lambda: f64,
) -> Result<ValueId> {
    let mut acc: Option<ValueId> = None;
    for anchor in anchors {
        if anchor.fisher.len() != current.len() || anchor.anchor.len() != current.len() {
            return Err(Error::contract(format!(
                "anchor for subtask {} has {} parameters, model has {}",
                anchor.subtask,
                anchor.fisher.len(),
                current.len()
            )));
        }
        for ((fisher, theta_star), &theta) in
            anchor.fisher.iter().zip(&anchor.anchor).zip(current)
        {
            let shape = tape.value(theta).shape();
            if fisher.shape() != shape || theta_star.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "ewc_penalty",
                    lhs: fisher.shape(),
                    rhs: shape,
                });
            }
            let anchor_leaf = tape.leaf(theta_star.clone());
            let fisher_leaf = tape.leaf(fisher.clone());
            let diff = tape.sub(theta, anchor_leaf)?;
            let sq = tape.square(diff);
            let weighted = tape.mul(fisher_leaf, sq)?;
            let s = tape.sum(weighted);
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
    }
    Ok(match acc {
        Some(total) => tape.scale(total, lambda / 2.0),
        None => tape.leaf(Tensor::scalar(0.0)),
    })
}

/// Trains a monolithic classifier on one subtask with the EWC penalty from
/// `anchors` (skipped entirely when `lambda == 0` or no anchor exists, so a
/// λ=0 run is bit-identical to plain training). LMN models additionally
/// carry the orthogonality penalty from `cfg.beta`.
pub fn train_classifier(
    model: &mut Classifier,
    data: &SequenceBatch,
    anchors: &[FisherAnchor],
    lambda: f64,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainingLog> {
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in iterate_batches(data, cfg.batch_size, rng)? {
            loss_sum += classifier_step(model, &batch, anchors, lambda, cfg, &mut opt)?;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            task_loss: loss_sum / batches as f64,
            ae_loss: None,
        };
        if !stats.task_loss.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite classifier loss at epoch {epoch}"
            )));
        }
        log.epochs.push(stats);
    }
    Ok(log)
}

fn classifier_step(
    model: &mut Classifier,
    batch: &SequenceBatch,
    anchors: &[FisherAnchor],
    lambda: f64,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
) -> Result<f64> {
    let mut tape = Tape::new();
    let ids = model.register(&mut tape, true);
    let inputs: Vec<ValueId> = (0..batch.t_len())
        .map(|t| tape.leaf(batch.step_matrix(t)))
        .collect();
    let out = model.forward_steps(&mut tape, &ids, &inputs, batch.len())?;
    let xent = tape.softmax_xent(out.logits, batch.labels())?;
    let mut loss = xent;
    if let CellIds::Lmn(lmn) = &ids.cell {
        if cfg.beta > 0.0 {
            let penalty = crate::cells::orth_penalty(&mut tape, lmn.w_mm, cfg.beta)?;
            loss = tape.add(loss, penalty)?;
        }
    }
    if lambda > 0.0 && !anchors.is_empty() {
        let penalty = ewc_penalty(&mut tape, &ids.ordered(), anchors, lambda)?;
        loss = tape.add(loss, penalty)?;
    }
    let loss_value = tape.scalar_value(loss)?;
    if !loss_value.is_finite() {
        return Err(Error::numeric("non-finite loss in classifier step"));
    }
    let grads = tape.backward(loss)?;
    let mut grad_tensors: Vec<Tensor> = ids
        .ordered()
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id).shape()))
        .collect();
    if let Some(max_norm) = cfg.clip {
        clip_global_norm(&mut grad_tensors, max_norm);
    }
    let mut params = model.tensors_mut();
    opt.step(&mut params, &grad_tensors)?;
    Ok(loss_value)
}

/// Trains on one subtask with the penalties from every previous anchor, then
/// appends the new subtask's [`FisherAnchor`].
pub fn train_subtask_ewc(
    model: &mut Classifier,
    data: &SequenceBatch,
    anchors: &mut Vec<FisherAnchor>,
    ewc: &EwcConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainingLog> {
    let log = train_classifier(model, data, anchors, ewc.lambda, cfg, rng)?;
    let count = ewc.fisher_sample_count.min(data.len()).max(1);
    let subtask = anchors.len();
    anchors.push(fisher_diag(model, data, count, subtask)?);
    Ok(log)
}
