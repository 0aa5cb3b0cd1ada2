//! Dynamic-environment construction: batched sequence data, fixed pixel
//! permutations, class-incremental subtask streams and seeded batch
//! iteration.

pub mod digits;
pub mod io;
pub mod synthetic;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

pub use digits::{build_digit_stream, generate_digits, DigitSource, DigitStreamConfig};
pub use synthetic::{build_synthetic_stream, SyntheticConfig};

/// A batch of equal-length feature sequences with integer class labels.
///
/// Data is stored flat in `[sequence][timestep][feature]` order. Labels are
/// within-subtask indices in `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    t_len: usize,
    feat_dim: usize,
    classes: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl SequenceBatch {
    pub fn new(
        t_len: usize,
        feat_dim: usize,
        classes: usize,
        data: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if t_len == 0 || feat_dim == 0 {
            return Err(Error::validation("sequence batch with empty shape"));
        }
        if data.len() != labels.len() * t_len * feat_dim {
            return Err(Error::validation(format!(
                "sequence data length {} does not match {} sequences of {}x{}",
                data.len(),
                labels.len(),
                t_len,
                feat_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(SequenceBatch {
            t_len,
            feat_dim,
            classes,
            data,
            labels,
        })
    }

    /// Number of sequences.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    /// Flat `[t][feature]` view of one sequence.
    pub fn sequence_data(&self, i: usize) -> &[f64] {
        let stride = self.t_len * self.feat_dim;
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Single-sequence batch (copies the sequence).
    pub fn sequence(&self, i: usize) -> SequenceBatch {
        SequenceBatch {
            t_len: self.t_len,
            feat_dim: self.feat_dim,
            classes: self.classes,
            data: self.sequence_data(i).to_vec(),
            labels: vec![self.labels[i]],
        }
    }

    /// The batch's timestep-t slice as a [len × feat_dim] matrix.
    pub fn step_matrix(&self, t: usize) -> Tensor {
        debug_assert!(t < self.t_len);
        let mut out = Vec::with_capacity(self.len() * self.feat_dim);
        let stride = self.t_len * self.feat_dim;
        for i in 0..self.len() {
            let base = i * stride + t * self.feat_dim;
            out.extend_from_slice(&self.data[base..base + self.feat_dim]);
        }
        Tensor::new(self.len(), self.feat_dim, out).expect("counted data")
    }

    /// Gathers a sub-batch by sequence indices.
    pub fn gather(&self, indices: &[usize]) -> SequenceBatch {
        let stride = self.t_len * self.feat_dim;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.sequence_data(i));
            labels.push(self.labels[i]);
        }
        SequenceBatch {
            t_len: self.t_len,
            feat_dim: self.feat_dim,
            classes: self.classes,
            data,
            labels,
        }
    }

    /// Concatenates batches with identical shapes and class counts.
    pub fn concat(parts: &[&SequenceBatch]) -> Result<SequenceBatch> {
        let first = parts
            .first()
            .ok_or_else(|| Error::validation("concat of zero batches"))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if (p.t_len, p.feat_dim, p.classes) != (first.t_len, first.feat_dim, first.classes) {
                return Err(Error::validation("concat of mismatched sequence batches"));
            }
            data.extend_from_slice(&p.data);
            labels.extend_from_slice(&p.labels);
        }
        SequenceBatch::new(first.t_len, first.feat_dim, first.classes, data, labels)
    }
}

/// Fixed random bijection on timestep indices, shared by every sequence of a
/// stream.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelPermutation {
    perm: Vec<usize>,
    seed: u64,
}

impl PixelPermutation {
    /// Seeded Fisher–Yates permutation of `0..len`.
    pub fn new(seed: u64, len: usize) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        let mut rng = Rng::new(seed);
        rng.shuffle(&mut perm);
        PixelPermutation { perm, seed }
    }

    pub fn identity(len: usize) -> Self {
        PixelPermutation {
            perm: (0..len).collect(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    /// Inverse permutation (applying both is the identity).
    pub fn inverse(&self) -> PixelPermutation {
        let mut inv = vec![0usize; self.perm.len()];
        for (t, &p) in self.perm.iter().enumerate() {
            inv[p] = t;
        }
        PixelPermutation {
            perm: inv,
            seed: self.seed,
        }
    }

    /// Reorders the timesteps of one flat `[t][feature]` sequence:
    /// `out[t] = x[perm[t]]`.
    pub fn apply(&self, x: &[f64], feat_dim: usize) -> Result<Vec<f64>> {
        if x.len() != self.perm.len() * feat_dim {
            return Err(Error::validation(format!(
                "permutation of length {} cannot reorder a sequence of {} values ({} features)",
                self.perm.len(),
                x.len(),
                feat_dim
            )));
        }
        let mut out = Vec::with_capacity(x.len());
        for &p in &self.perm {
            out.extend_from_slice(&x[p * feat_dim..(p + 1) * feat_dim]);
        }
        Ok(out)
    }

    /// Applies the permutation to every sequence of a batch.
    pub fn apply_batch(&self, batch: &SequenceBatch) -> Result<SequenceBatch> {
        let mut data = Vec::with_capacity(batch.data.len());
        for i in 0..batch.len() {
            data.extend(self.apply(batch.sequence_data(i), batch.feat_dim)?);
        }
        SequenceBatch::new(
            batch.t_len,
            batch.feat_dim,
            batch.classes,
            data,
            batch.labels.clone(),
        )
    }
}

/// Which split of a subtask is being accessed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One input distribution: disjoint original classes, fixed splits.
#[derive(Debug)]
pub struct Subtask {
    pub id: usize,
    /// Classes of the source task covered by this subtask, before remapping.
    pub original_classes: Vec<usize>,
    pub train: SequenceBatch,
    pub val: SequenceBatch,
    pub test: SequenceBatch,
}

/// Ordered subtasks defining a dynamic environment.
///
/// In debug builds the stream keeps an access log so the harness can assert
/// that training never touches data from a future subtask.
#[derive(Debug)]
pub struct SubtaskStream {
    subtasks: Vec<Subtask>,
    permutation_seed: u64,
    training_limit: AtomicUsize,
    access_log: Mutex<Vec<(usize, Split)>>,
}

impl SubtaskStream {
    pub fn new(subtasks: Vec<Subtask>, permutation_seed: u64) -> Result<Self> {
        let mut seen: Vec<usize> = Vec::new();
        for s in &subtasks {
            for &c in &s.original_classes {
                if seen.contains(&c) {
                    return Err(Error::validation(format!(
                        "class {c} appears in more than one subtask"
                    )));
                }
                seen.push(c);
            }
        }
        Ok(SubtaskStream {
            subtasks,
            permutation_seed,
            training_limit: AtomicUsize::new(usize::MAX),
            access_log: Mutex::new(Vec::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    pub fn permutation_seed(&self) -> u64 {
        self.permutation_seed
    }

    pub fn subtask(&self, s: usize) -> &Subtask {
        &self.subtasks[s]
    }

    pub fn subtasks(&self) -> &[Subtask] {
        &self.subtasks
    }

    /// Marks the start of training on subtask `s`; later train-split accesses
    /// beyond `s` trip a debug assertion.
    pub fn begin_training(&self, s: usize) {
        self.training_limit.store(s, Ordering::SeqCst);
    }

    /// Marks the end of all training (evaluation may touch everything).
    pub fn end_training(&self) {
        self.training_limit.store(usize::MAX, Ordering::SeqCst);
    }

    /// Access a split, recording it in debug builds.
    pub fn split(&self, s: usize, which: Split) -> &SequenceBatch {
        if cfg!(debug_assertions) {
            self.access_log.lock().unwrap().push((s, which));
        }
        if which == Split::Train {
            let limit = self.training_limit.load(Ordering::SeqCst);
            debug_assert!(
                s <= limit || limit == usize::MAX,
                "train split of subtask {s} accessed while training subtask {limit}"
            );
        }
        let st = &self.subtasks[s];
        match which {
            Split::Train => &st.train,
            Split::Val => &st.val,
            Split::Test => &st.test,
        }
    }

    /// Recorded accesses (empty in release builds).
    pub fn access_log(&self) -> Vec<(usize, Split)> {
        self.access_log.lock().unwrap().clone()
    }
}

/// Seeded shuffled minibatch iterator; the final partial batch is included.
pub struct BatchIter<'a> {
    split: &'a SequenceBatch,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

/// Shuffles the split with `rng` and yields batches of `batch_size`.
pub fn iterate_batches<'a>(
    split: &'a SequenceBatch,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::validation("batch_size must be nonzero"));
    }
    if split.is_empty() {
        return Err(Error::validation("cannot iterate over an empty split"));
    }
    let mut order: Vec<usize> = (0..split.len()).collect();
    rng.shuffle(&mut order);
    Ok(BatchIter {
        split,
        order,
        batch_size,
        cursor: 0,
    })
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = SequenceBatch;

    fn next(&mut self) -> Option<SequenceBatch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.split.gather(&self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }
}
