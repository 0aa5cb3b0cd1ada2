//! Minimal dense numeric core: matrices, deterministic RNG, a reverse-mode
//! gradient tape, and first-order optimizers. Sufficient for truncated-free
//! backpropagation through time over the recurrent cells in this crate.

pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use optim::{clip_global_norm, Optimizer, OptimizerKind, OptimizerSettings};
pub use rng::Rng;
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::{sigmoid, Tensor};
