//! Gated Incremental Memory: a progressive recurrent architecture.
//!
//! One module (cell + output head) and one gating autoencoder are added per
//! subtask. When a new module arrives, all previous modules and autoencoders
//! are frozen for good. Module 1 consumes the raw input; module j consumes
//! the input concatenated with module j−1's per-step activations (h for
//! LSTM, [m; h] for LMN), so inter-module connections grow linearly with the
//! module count. At inference the autoencoder with the smallest
//! reconstruction error picks the module that computes the output.

use crate::autoenc::{ae_train_step, select_module, Autoencoder};
use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::model::{CellIds, CellKind, CellSizes, CellTrace, Classifier, ClassifierIds};
use crate::numcore::{
    clip_global_norm, Optimizer, OptimizerSettings, Rng, Tape, Tensor, ValueId,
};

/// One expert of the progressive stack.
#[derive(Clone, Debug, PartialEq)]
pub struct GimModule {
    pub net: Classifier,
    pub frozen: bool,
    pub subtask: usize,
}

/// The full progressive model: parallel lists of modules and autoencoders.
#[derive(Clone, Debug, PartialEq)]
pub struct GimModel {
    pub kind: CellKind,
    pub input_size: usize,
    pub classes: usize,
    pub sizes: CellSizes,
    pub ae_hidden: usize,
    pub modules: Vec<GimModule>,
    pub autoencoders: Vec<Autoencoder>,
}

impl GimModel {
    /// An empty model; call [`GimModel::add_module`] before each subtask.
    pub fn new(
        kind: CellKind,
        input_size: usize,
        classes: usize,
        sizes: CellSizes,
        ae_hidden: usize,
    ) -> Self {
        GimModel {
            kind,
            input_size,
            classes,
            sizes,
            ae_hidden,
            modules: Vec::new(),
            autoencoders: Vec::new(),
        }
    }

    pub fn module_count(&self) -> usize {
        self.modules.len()
    }

    /// Input width of module `j` (0-based): raw input for the first module,
    /// input plus the previous module's activations afterwards.
    pub fn module_input_size(&self, j: usize) -> usize {
        if j == 0 {
            self.input_size
        } else {
            self.input_size + self.modules[j - 1].net.cell.feed_width()
        }
    }

    /// Modules whose activations module `j` consumes. Only the immediate
    /// predecessor is connected, so the connection count grows linearly.
    pub fn module_input_sources(&self, j: usize) -> Vec<usize> {
        if j == 0 {
            Vec::new()
        } else {
            vec![j - 1]
        }
    }

    /// Total number of inter-module connections in the stack.
    pub fn connection_count(&self) -> usize {
        self.modules.len().saturating_sub(1)
    }

    /// Freezes everything trained so far and appends a fresh module (reading
    /// the raw input plus the previous module's activations) and a fresh
    /// autoencoder (reading the raw input).
    pub fn add_module(&mut self, rng: &mut Rng) {
        for m in &mut self.modules {
            m.frozen = true;
        }
        for ae in &mut self.autoencoders {
            ae.frozen = true;
        }
        let subtask = self.modules.len();
        let input = self.module_input_size(subtask);
        let net = Classifier::init(rng, self.kind, input, self.sizes, self.classes);
        self.modules.push(GimModule {
            net,
            frozen: false,
            subtask,
        });
        self.autoencoders
            .push(Autoencoder::init(rng, self.input_size, self.ae_hidden, subtask));
    }

    /// Forward pass through modules 1..=n on an existing tape. Frozen
    /// modules contribute constants (their activations are detached), so
    /// gradients reach only unfrozen parameters. Returns the logits node of
    /// module n.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        x: &SequenceBatch,
        n: usize,
    ) -> Result<ValueId> {
        Ok(self.forward_with_ids(tape, x, n)?.0)
    }

    /// Like [`GimModel::forward_on_tape`], also returning the registered ids
    /// of module n so the trainer can address its parameters.
    fn forward_with_ids(
        &self,
        tape: &mut Tape,
        x: &SequenceBatch,
        n: usize,
    ) -> Result<(ValueId, ClassifierIds)> {
        if n == 0 || n > self.modules.len() {
            return Err(Error::validation(format!(
                "module index {n} out of range 1..={}",
                self.modules.len()
            )));
        }
        if x.feat_dim() != self.input_size {
            return Err(Error::ShapeMismatch {
                op: "gim forward",
                lhs: (x.t_len(), x.feat_dim()),
                rhs: (x.t_len(), self.input_size),
            });
        }
        let raw_inputs: Vec<ValueId> = (0..x.t_len())
            .map(|t| tape.leaf(x.step_matrix(t)))
            .collect();
        let mut prev_trace: Option<CellTrace> = None;
        let mut last: Option<(ValueId, ClassifierIds)> = None;
        for (j, module) in self.modules.iter().take(n).enumerate() {
            let inputs: Vec<ValueId> = match &prev_trace {
                None => raw_inputs.clone(),
                Some(trace) => {
                    let mut per_step = Vec::with_capacity(x.t_len());
                    for (t, &x_t) in raw_inputs.iter().enumerate() {
                        let mut parts = vec![x_t];
                        parts.extend(trace.feed_at(t));
                        per_step.push(tape.concat_cols(&parts)?);
                    }
                    per_step
                }
            };
            let ids = module.net.register(tape, !module.frozen);
            let out = module.net.forward_steps(tape, &ids, &inputs, x.len())?;
            let trace = out.trace;
            // Detach a frozen module's activations so the backward pass does
            // not walk into it.
            let detached = if module.frozen && j + 1 < n {
                detach_trace(tape, trace)
            } else {
                trace
            };
            prev_trace = Some(detached);
            last = Some((out.logits, ids));
        }
        Ok(last.expect("n >= 1"))
    }

    /// Logits of modules 1..=n for a whole batch on a fresh tape.
    pub fn forward(&self, x: &SequenceBatch, n: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let logits = self.forward_on_tape(&mut tape, x, n)?;
        Ok(tape.value(logits).clone())
    }

    /// Gated inference on a single sequence: every autoencoder reconstructs
    /// it, the best one picks the module, and that module's stack computes
    /// the logits. Returns `(logits, module index)` (0-based).
    pub fn infer(&self, x: &SequenceBatch) -> Result<(Tensor, usize)> {
        if self.modules.is_empty() {
            return Err(Error::contract("inference on an empty GIM model"));
        }
        let chosen = select_module(&self.autoencoders, x)?;
        let logits = self.forward(x, chosen + 1)?;
        Ok((logits, chosen))
    }

    /// Byte-exact snapshots of all module and autoencoder parameters, for
    /// freezing checks.
    pub fn snapshot(&self) -> Vec<Vec<Tensor>> {
        let mut out: Vec<Vec<Tensor>> = self.modules.iter().map(|m| m.net.snapshot()).collect();
        out.extend(self.autoencoders.iter().map(|ae| ae.snapshot()));
        out
    }
}

fn detach_trace(tape: &mut Tape, trace: CellTrace) -> CellTrace {
    match trace {
        CellTrace::Lstm(mut t) => {
            for h in t.hs.iter_mut() {
                *h = tape.detach(*h);
            }
            CellTrace::Lstm(t)
        }
        CellTrace::Lmn(mut t) => {
            for h in t.hs.iter_mut() {
                *h = tape.detach(*h);
            }
            for m in t.ms.iter_mut() {
                *m = tape.detach(*m);
            }
            CellTrace::Lmn(t)
        }
    }
}

/// Hyperparameters of one subtask's training loop.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSettings,
    /// Learning rate of the autoencoder optimizer (Adam).
    pub ae_lr: f64,
    /// The autoencoder takes one optimizer step per batch chunk; values > 1
    /// give it more steps per data pass without touching the module's
    /// schedule.
    pub ae_chunks: usize,
    /// Orthogonality penalty weight for LMN memory matrices.
    pub beta: f64,
    /// Optional global-norm gradient clip.
    pub clip: Option<f64>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, lr: f64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            optimizer: OptimizerSettings::adam(lr),
            ae_lr: lr,
            ae_chunks: 1,
            beta: 0.1,
            clip: None,
        }
    }
}

/// Per-epoch mean losses of one subtask's training.
#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub task_loss: f64,
    pub ae_loss: Option<f64>,
}

/// Trains the last (unfrozen) module and its autoencoder on one subtask.
///
/// Both optimizers run in the same pass over the data: per batch, one step
/// on the cross-entropy (plus the LMN orthogonality penalty) for the module,
/// one step on the reconstruction MSE for the autoencoder. Frozen modules
/// and autoencoders are untouched.
pub fn train_subtask(
    model: &mut GimModel,
    data: &SequenceBatch,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainingLog> {
    let n = model.modules.len();
    if n == 0 {
        return Err(Error::contract("train_subtask before any add_module"));
    }
    if model.modules[n - 1].frozen {
        return Err(Error::contract("last module is frozen; call add_module"));
    }
    let mut module_opt = Optimizer::new(cfg.optimizer);
    let mut ae_opt = Optimizer::new(OptimizerSettings::adam(cfg.ae_lr));
    let mut log = TrainingLog::default();

    let chunks = cfg.ae_chunks.max(1);
    for epoch in 0..cfg.epochs {
        let mut task_sum = 0.0;
        let mut ae_sum = 0.0;
        let mut batches = 0usize;
        for batch in crate::data::iterate_batches(data, cfg.batch_size, rng)? {
            task_sum += gim_module_step(model, &batch, cfg, &mut module_opt)?;
            let ae = model
                .autoencoders
                .last_mut()
                .expect("one AE per module");
            let mut ae_batch_sum = 0.0;
            let mut ae_steps = 0usize;
            let chunk_len = batch.len().div_ceil(chunks);
            for start in (0..batch.len()).step_by(chunk_len) {
                let end = (start + chunk_len).min(batch.len());
                let idx: Vec<usize> = (start..end).collect();
                ae_batch_sum += ae_train_step(ae, &batch.gather(&idx), &mut ae_opt)?;
                ae_steps += 1;
            }
            ae_sum += ae_batch_sum / ae_steps as f64;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            task_loss: task_sum / batches as f64,
            ae_loss: Some(ae_sum / batches as f64),
        };
        if !stats.task_loss.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite GIM loss at epoch {epoch}"
            )));
        }
        log.epochs.push(stats);
    }
    Ok(log)
}

/// One optimizer step of the last module on one batch. Returns the loss.
fn gim_module_step(
    model: &mut GimModel,
    batch: &SequenceBatch,
    cfg: &TrainConfig,
    opt: &mut Optimizer,
) -> Result<f64> {
    let n = model.modules.len();
    let mut tape = Tape::new();
    let (logits, ids) = model.forward_with_ids(&mut tape, batch, n)?;
    let xent = tape.softmax_xent(logits, batch.labels())?;
    let loss = match &ids.cell {
        CellIds::Lmn(lmn) if cfg.beta > 0.0 => {
            let penalty = crate::cells::orth_penalty(&mut tape, lmn.w_mm, cfg.beta)?;
            tape.add(xent, penalty)?
        }
        _ => xent,
    };
    let loss_value = tape.scalar_value(loss)?;
    if !loss_value.is_finite() {
        return Err(Error::numeric("non-finite loss in GIM module step"));
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
    let mut params = model.modules[n - 1].net.tensors_mut();
    opt.step(&mut params, &grad_tensors)?;
    Ok(loss_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{build_synthetic_stream, SyntheticConfig};

    fn toy_batch(classes: usize) -> SequenceBatch {
        let data = vec![
            0.1, 0.2, 0.3, //
            -0.1, -0.2, -0.3, //
            0.5, 0.4, 0.3,
        ];
        SequenceBatch::new(3, 1, classes, data, vec![0, 1, 0]).unwrap()
    }

    #[test]
    fn module_input_dims_grow_by_feed_width() {
        let mut rng = Rng::new(1);
        let mut lstm = GimModel::new(CellKind::Lstm, 4, 2, CellSizes::uniform(8), 8);
        lstm.add_module(&mut rng);
        lstm.add_module(&mut rng);
        assert_eq!(lstm.modules[0].net.cell.input_size(), 4);
        assert_eq!(lstm.modules[1].net.cell.input_size(), 12);

        let mut lmn = GimModel::new(
            CellKind::Lmn,
            4,
            2,
            CellSizes {
                hidden: 8,
                functional: 8,
                memory: 8,
            },
            8,
        );
        lmn.add_module(&mut rng);
        lmn.add_module(&mut rng);
        assert_eq!(lmn.modules[1].net.cell.input_size(), 20);
    }

    #[test]
    fn add_module_freezes_predecessors() {
        let mut rng = Rng::new(2);
        let mut model = GimModel::new(CellKind::Lstm, 1, 2, CellSizes::uniform(3), 3);
        model.add_module(&mut rng);
        assert!(!model.modules[0].frozen);
        model.add_module(&mut rng);
        assert!(model.modules[0].frozen);
        assert!(model.autoencoders[0].frozen);
        assert!(!model.modules[1].frozen);
        assert!(!model.autoencoders[1].frozen);
    }

    #[test]
    fn forward_n1_equals_plain_classifier() {
        let mut rng = Rng::new(3);
        let mut model = GimModel::new(CellKind::Lstm, 1, 2, CellSizes::uniform(4), 4);
        model.add_module(&mut rng);
        let batch = toy_batch(2);
        let via_gim = model.forward(&batch, 1).unwrap();
        let via_classifier = model.modules[0].net.logits(&batch).unwrap();
        assert_eq!(via_gim, via_classifier);
    }

    #[test]
    fn zero_head_means_zero_logits() {
        let mut rng = Rng::new(4);
        let mut model = GimModel::new(CellKind::Lmn, 1, 2, CellSizes::uniform(4), 4);
        model.add_module(&mut rng);
        model.modules[0].net.head_w = Tensor::zeros(4, 2);
        model.modules[0].net.head_b = Tensor::zeros(1, 2);
        let logits = model.forward(&toy_batch(2), 1).unwrap();
        assert_eq!(logits, Tensor::zeros(3, 2));
    }

    #[test]
    fn out_of_range_module_index_rejected() {
        let mut rng = Rng::new(5);
        let mut model = GimModel::new(CellKind::Lstm, 1, 2, CellSizes::uniform(3), 3);
        model.add_module(&mut rng);
        let batch = toy_batch(2);
        assert!(model.forward(&batch, 0).is_err());
        assert!(model.forward(&batch, 2).is_err());
    }

    #[test]
    fn training_before_add_module_is_a_contract_error() {
        let mut model = GimModel::new(CellKind::Lstm, 1, 2, CellSizes::uniform(3), 3);
        let cfg = TrainConfig::new(1, 2, 1e-3);
        let mut rng = Rng::new(6);
        assert!(matches!(
            train_subtask(&mut model, &toy_batch(2), &cfg, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_lr_training_changes_nothing() {
        let mut rng = Rng::new(7);
        let mut model = GimModel::new(CellKind::Lmn, 1, 2, CellSizes::uniform(3), 3);
        model.add_module(&mut rng);
        let before = model.snapshot();
        let mut cfg = TrainConfig::new(2, 2, 0.0);
        cfg.ae_lr = 0.0;
        train_subtask(&mut model, &toy_batch(2), &cfg, &mut Rng::new(8)).unwrap();
        assert_eq!(model.snapshot(), before);
    }

    #[test]
    fn frozen_parameters_survive_later_training_bitexact() {
        let cfg_data = SyntheticConfig::two_subtask_pm2(9);
        let stream = build_synthetic_stream(&cfg_data).unwrap();
        let mut rng = Rng::new(10);
        let mut model = GimModel::new(CellKind::Lstm, 4, 2, CellSizes::uniform(6), 6);
        let cfg = TrainConfig::new(2, 16, 1e-3);

        model.add_module(&mut rng);
        train_subtask(&mut model, &stream.subtask(0).train, &cfg, &mut rng).unwrap();
        let module0 = model.modules[0].net.snapshot();
        let ae0 = model.autoencoders[0].snapshot();

        model.add_module(&mut rng);
        train_subtask(&mut model, &stream.subtask(1).train, &cfg, &mut rng).unwrap();
        assert_eq!(model.modules[0].net.snapshot(), module0);
        assert_eq!(model.autoencoders[0].snapshot(), ae0);
    }

    #[test]
    fn frozen_forward_is_bit_identical_after_later_training() {
        let cfg_data = SyntheticConfig::two_subtask_pm2(11);
        let stream = build_synthetic_stream(&cfg_data).unwrap();
        let mut rng = Rng::new(12);
        let mut model = GimModel::new(CellKind::Lmn, 4, 2, CellSizes::uniform(5), 5);
        let cfg = TrainConfig::new(2, 16, 1e-3);

        model.add_module(&mut rng);
        train_subtask(&mut model, &stream.subtask(0).train, &cfg, &mut rng).unwrap();
        let probe = stream.subtask(0).val.gather(&[0, 1, 2]);
        let before = model.forward(&probe, 1).unwrap();

        model.add_module(&mut rng);
        train_subtask(&mut model, &stream.subtask(1).train, &cfg, &mut rng).unwrap();
        let after = model.forward(&probe, 1).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn infer_returns_forward_of_chosen_module() {
        let mut rng = Rng::new(13);
        let mut model = GimModel::new(CellKind::Lstm, 1, 2, CellSizes::uniform(4), 4);
        model.add_module(&mut rng);
        model.add_module(&mut rng);
        let batch = toy_batch(2);
        let x = batch.sequence(0);
        let (logits, k) = model.infer(&x).unwrap();
        let oracle = model.forward(&x, k + 1).unwrap();
        assert_eq!(logits, oracle);
    }

    #[test]
    fn single_module_inference_uses_module_one() {
        let mut rng = Rng::new(14);
        let mut model = GimModel::new(CellKind::Lmn, 1, 2, CellSizes::uniform(4), 4);
        model.add_module(&mut rng);
        let x = toy_batch(2).sequence(1);
        let (logits, k) = model.infer(&x).unwrap();
        assert_eq!(k, 0);
        assert_eq!(logits, model.forward(&x, 1).unwrap());
    }

    #[test]
    fn connection_growth_is_linear() {
        let mut rng = Rng::new(15);
        let mut model = GimModel::new(CellKind::Lstm, 2, 2, CellSizes::uniform(3), 3);
        for n in 1..=5 {
            model.add_module(&mut rng);
            assert_eq!(model.connection_count(), n - 1);
            for j in 0..n {
                let sources = model.module_input_sources(j);
                if j == 0 {
                    assert!(sources.is_empty());
                } else {
                    assert_eq!(sources, vec![j - 1]);
                    assert_eq!(
                        model.modules[j].net.cell.input_size(),
                        model.input_size + model.modules[j - 1].net.cell.feed_width()
                    );
                }
            }
        }
    }
}
