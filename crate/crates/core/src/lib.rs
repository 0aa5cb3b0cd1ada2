//! Continual learning for recurrent networks.
//!
//! This crate implements Gated Incremental Memory (GIM) — a progressive
//! recurrent architecture that adds one frozen-predecessor module plus one
//! gating autoencoder per subtask — together with LSTM and Linear Memory
//! Network cells, an Elastic Weight Consolidation baseline, synthetic and
//! pixel-sequence drift benchmarks, and a deterministic experiment harness
//! that measures catastrophic forgetting.
//!
//! Layout:
//! - [`numcore`]: matrices, seeded RNG, reverse-mode gradient tape, optimizers
//! - [`cells`]: LSTM and LMN steps, unrolling, orthogonal init and penalty
//! - [`model`]: recurrent classifier (cell + linear head)
//! - [`autoenc`]: sequence autoencoders and reconstruction-error gating
//! - [`gim`]: the progressive model, training and gated inference
//! - [`ewc`]: Fisher estimation and the quadratic consolidation penalty
//! - [`data`]: subtask streams, pixel permutations, binary dataset files
//! - [`harness`]: experiment configs, the runner, metrics and checkpoints
//! - [`gradcheck`]: finite-difference verification of every gradient path

pub mod autoenc;
pub mod cells;
pub mod data;
pub mod error;
pub mod ewc;
pub mod gim;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};
