//! LSTM sequence-to-sequence autoencoders, one per subtask, used as the
//! gating mechanism that selects a GIM module at inference time.
//!
//! The encoder consumes the input sequence from zero state. The decoder
//! starts from the final encoder state and receives an all-zero input at
//! every step; its per-step hidden states are projected back to the input
//! dimension. Reconstruction quality (MSE) identifies which subtask an
//! unlabeled sequence came from: the autoencoder trained on that subtask
//! reconstructs it best.

use crate::cells::{lstm_step, lstm_unroll, orthogonal_init, LstmIds, LstmParams, LstmState};
use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::numcore::{Optimizer, Rng, Tape, Tensor, ValueId};

fn orthogonal(rng: &mut Rng, n: usize) -> Tensor {
    orthogonal_init(rng, n).expect("hidden_size >= 1")
}

/// Per-subtask sequence autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    /// hidden → input-dim projection of decoder states (no bias).
    pub w_out: Tensor,
    pub hidden_size: usize,
    pub input_size: usize,
    /// Subtask this autoencoder belongs to.
    pub trained_on: usize,
    /// Once the subtask ends the autoencoder is frozen for good.
    pub frozen: bool,
}

/// Tape ids of a registered autoencoder.
pub struct AutoencoderIds {
    pub encoder: LstmIds,
    pub decoder: LstmIds,
    pub w_out: ValueId,
}

impl AutoencoderIds {
    pub fn ordered(&self) -> Vec<ValueId> {
        let mut ids = self.encoder.ordered();
        ids.extend(self.decoder.ordered());
        ids.push(self.w_out);
        ids
    }
}

impl Autoencoder {
    pub fn init(rng: &mut Rng, input_size: usize, hidden_size: usize, subtask: usize) -> Self {
        let bound = (6.0 / (hidden_size + input_size) as f64).sqrt();
        let w_out = Tensor::new(
            hidden_size,
            input_size,
            (0..hidden_size * input_size)
                .map(|_| rng.range(-bound, bound))
                .collect(),
        )
        .expect("counted data");
        // Reconstruction spans the whole sequence through a single state
        // bottleneck; orthogonal recurrent matrices keep that state usable
        // over long horizons.
        fn orthogonalize(rng: &mut Rng, p: &mut LstmParams, n: usize) {
            p.w_hi = orthogonal(rng, n);
            p.w_hf = orthogonal(rng, n);
            p.w_hg = orthogonal(rng, n);
            p.w_ho = orthogonal(rng, n);
        }
        let mut encoder = LstmParams::init(rng, input_size, hidden_size);
        let mut decoder = LstmParams::init(rng, input_size, hidden_size);
        orthogonalize(rng, &mut encoder, hidden_size);
        orthogonalize(rng, &mut decoder, hidden_size);
        Autoencoder {
            encoder,
            decoder,
            w_out,
            hidden_size,
            input_size,
            trained_on: subtask,
            frozen: false,
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .encoder
            .named()
            .into_iter()
            .map(|(n, t)| (format!("enc.{n}"), t))
            .collect();
        out.extend(
            self.decoder
                .named()
                .into_iter()
                .map(|(n, t)| (format!("dec.{n}"), t)),
        );
        out.push(("w_out".to_string(), &self.w_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.decoder.tensors_mut());
        out.push(&mut self.w_out);
        out
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> AutoencoderIds {
        let encoder = self.encoder.register(tape, trainable);
        let decoder = self.decoder.register(tape, trainable);
        let w_out = if trainable {
            tape.param(&self.w_out)
        } else {
            tape.leaf(self.w_out.clone())
        };
        AutoencoderIds {
            encoder,
            decoder,
            w_out,
        }
    }

    /// Reconstruction on an existing tape: returns the per-step reconstructed
    /// matrices x̃_1..x̃_T.
    pub fn reconstruct_steps(
        &self,
        tape: &mut Tape,
        ids: &AutoencoderIds,
        inputs: &[ValueId],
        batch: usize,
    ) -> Result<Vec<ValueId>> {
        let enc = lstm_unroll(tape, &ids.encoder, inputs, batch, self.hidden_size)?;
        // Decoder starts from the final encoder state and sees zero inputs.
        let zero_in = tape.leaf(Tensor::zeros(batch, self.input_size));
        let mut state = LstmState {
            h: enc.final_state.h,
            c: enc.final_state.c,
        };
        let mut outputs = Vec::with_capacity(inputs.len());
        for _ in 0..inputs.len() {
            state = lstm_step(tape, &ids.decoder, zero_in, state)?;
            outputs.push(tape.matmul(state.h, ids.w_out)?);
        }
        Ok(outputs)
    }

    /// Reconstructs a whole sequence batch; the output has the exact shape
    /// (and labels) of the input.
    pub fn reconstruct(&self, x: &SequenceBatch) -> Result<SequenceBatch> {
        if x.feat_dim() != self.input_size {
            return Err(Error::ShapeMismatch {
                op: "reconstruct",
                lhs: (x.t_len(), x.feat_dim()),
                rhs: (x.t_len(), self.input_size),
            });
        }
        let mut tape = Tape::new();
        let ids = self.register(&mut tape, false);
        let inputs: Vec<ValueId> = (0..x.t_len())
            .map(|t| tape.leaf(x.step_matrix(t)))
            .collect();
        let steps = self.reconstruct_steps(&mut tape, &ids, &inputs, x.len())?;
        // reassemble [seq][t][d] from the per-step [batch × d] matrices
        let mut data = vec![0.0; x.len() * x.t_len() * x.feat_dim()];
        let stride = x.t_len() * x.feat_dim();
        for (t, &step) in steps.iter().enumerate() {
            let m = tape.value(step);
            for i in 0..x.len() {
                let dst = i * stride + t * x.feat_dim();
                data[dst..dst + x.feat_dim()].copy_from_slice(m.row(i));
            }
        }
        SequenceBatch::new(
            x.t_len(),
            x.feat_dim(),
            x.classes(),
            data,
            x.labels().to_vec(),
        )
    }
}

/// Mean squared error per sequence: the mean over all timesteps and features
/// of the squared difference.
pub fn recon_error(x: &SequenceBatch, recon: &SequenceBatch) -> Result<Vec<f64>> {
    if x.t_len() != recon.t_len() || x.feat_dim() != recon.feat_dim() || x.len() != recon.len() {
        return Err(Error::ShapeMismatch {
            op: "recon_error",
            lhs: (x.len() * x.t_len(), x.feat_dim()),
            rhs: (recon.len() * recon.t_len(), recon.feat_dim()),
        });
    }
    let per_seq = x.t_len() * x.feat_dim();
    Ok((0..x.len())
        .map(|i| {
            x.sequence_data(i)
                .iter()
                .zip(recon.sequence_data(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / per_seq as f64
        })
        .collect())
}

/// Traced mean-squared-error loss between per-step reconstructions and the
/// original input nodes, averaged over every batch element, timestep and
/// feature.
pub fn mse_loss(tape: &mut Tape, recon: &[ValueId], targets: &[ValueId]) -> Result<ValueId> {
    if recon.len() != targets.len() || recon.is_empty() {
        return Err(Error::validation("mse_loss over mismatched step lists"));
    }
    let mut total: Option<ValueId> = None;
    let mut count = 0usize;
    for (&r, &x) in recon.iter().zip(targets) {
        let diff = tape.sub(r, x)?;
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        count += tape.value(x).len();
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    Ok(tape.scale(total.expect("nonempty"), 1.0 / count as f64))
}

/// One optimizer step on the reconstruction MSE of `batch`. Returns the
/// pre-step loss. Frozen autoencoders refuse to train.
pub fn ae_train_step(
    ae: &mut Autoencoder,
    batch: &SequenceBatch,
    opt: &mut Optimizer,
) -> Result<f64> {
    if ae.frozen {
        return Err(Error::contract(format!(
            "autoencoder of subtask {} is frozen",
            ae.trained_on
        )));
    }
    let mut tape = Tape::new();
    let ids = ae.register(&mut tape, true);
    let inputs: Vec<ValueId> = (0..batch.t_len())
        .map(|t| tape.leaf(batch.step_matrix(t)))
        .collect();
    let recon = ae.reconstruct_steps(&mut tape, &ids, &inputs, batch.len())?;
    let loss = mse_loss(&mut tape, &recon, &inputs)?;
    let loss_value = tape.scalar_value(loss)?;
    let grads = tape.backward(loss)?;
    let ordered = ids.ordered();
    let grad_tensors: Vec<Tensor> = ordered
        .iter()
        .map(|&id| grads.get_or_zeros(id, tape.value(id).shape()))
        .collect();
    let mut params = ae.tensors_mut();
    opt.step(&mut params, &grad_tensors)?;
    Ok(loss_value)
}

/// Index of the autoencoder with the smallest reconstruction error on a
/// single sequence; ties break toward the lowest index.
pub fn select_module(aes: &[Autoencoder], x: &SequenceBatch) -> Result<usize> {
    let errors = reconstruction_errors(aes, x)?;
    // errors is [sequence][ae]; x carries a single sequence here
    let row = &errors[0];
    let mut best = 0;
    for (i, &err) in row.iter().enumerate() {
        if err < row[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Reconstruction error of every autoencoder on every sequence of `x`.
/// Returns `[sequence][autoencoder]`.
pub fn reconstruction_errors(aes: &[Autoencoder], x: &SequenceBatch) -> Result<Vec<Vec<f64>>> {
    if aes.is_empty() {
        return Err(Error::validation("select_module over an empty AE list"));
    }
    let mut per_ae = Vec::with_capacity(aes.len());
    for ae in aes {
        let recon = ae.reconstruct(x)?;
        per_ae.push(recon_error(x, &recon)?);
    }
    let mut out = vec![vec![0.0; aes.len()]; x.len()];
    for (a, errs) in per_ae.iter().enumerate() {
        for (i, &e) in errs.iter().enumerate() {
            out[i][a] = e;
        }
    }
    Ok(out)
}
