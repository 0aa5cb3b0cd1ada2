//! Synthetic drift streams: fast, fully controllable subtask sequences for
//! property tests and gating experiments.
//!
//! Each subtask draws i.i.d. Gaussian sequences around per-class means. A
//! subtask is characterized by the offset between its class means and the
//! others', so reconstruction-based gating has a signal to latch onto while
//! classes inside a subtask stay separable at the sequence-mean level.

use crate::data::{SequenceBatch, Subtask, SubtaskStream};
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Configuration of a synthetic stream.
///
/// `class_means[s][c]` is the mean of every feature of every timestep for
/// class `c` of subtask `s`. All subtasks share the class count, timestep
/// count and feature dimension.
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub t_len: usize,
    pub feat_dim: usize,
    pub class_means: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Two subtasks centered at −2 and +2, classes offset ±0.5 inside each.
    pub fn two_subtask_pm2(seed: u64) -> Self {
        SyntheticConfig {
            t_len: 10,
            feat_dim: 4,
            class_means: vec![vec![-2.5, -1.5], vec![1.5, 2.5]],
            noise_std: 1.0,
            train_per_class: 60,
            val_per_class: 20,
            test_per_class: 20,
            seed,
        }
    }

    /// Evenly spread subtask centers with ±0.5 class offsets.
    pub fn spread(n_subtasks: usize, spacing: f64, seed: u64) -> Self {
        let half = (n_subtasks as f64 - 1.0) / 2.0;
        let class_means = (0..n_subtasks)
            .map(|s| {
                let center = (s as f64 - half) * spacing;
                vec![center - 0.5, center + 0.5]
            })
            .collect();
        SyntheticConfig {
            t_len: 10,
            feat_dim: 4,
            class_means,
            noise_std: 1.0,
            train_per_class: 60,
            val_per_class: 20,
            test_per_class: 20,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.t_len == 0 || self.feat_dim == 0 {
            return Err(Error::validation("synthetic stream with empty shape"));
        }
        if self.class_means.is_empty() {
            return Err(Error::validation("synthetic stream needs >= 1 subtask"));
        }
        let classes = self.class_means[0].len();
        if classes == 0 {
            return Err(Error::validation("synthetic subtask needs >= 1 class"));
        }
        for (s, means) in self.class_means.iter().enumerate() {
            if means.len() != classes {
                return Err(Error::validation(format!(
                    "subtask {s} has {} class means, expected {classes}",
                    means.len()
                )));
            }
            if means.iter().any(|m| !m.is_finite()) {
                return Err(Error::validation(format!(
                    "subtask {s} has a non-finite class mean"
                )));
            }
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::validation(
                "noise_std must be finite and nonnegative",
            ));
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::validation("every split needs >= 1 sequence per class"));
        }
        Ok(())
    }
}

/// Builds a deterministic synthetic stream from `cfg`.
pub fn build_synthetic_stream(cfg: &SyntheticConfig) -> Result<SubtaskStream> {
    cfg.validate()?;
    let classes = cfg.class_means[0].len();
    let root = Rng::new(cfg.seed);
    let mut subtasks = Vec::with_capacity(cfg.class_means.len());
    for (s, means) in cfg.class_means.iter().enumerate() {
        let mut rng = root.derive(1000 + s as u64);
        let mut make_split = |per_class: usize| -> Result<SequenceBatch> {
            let mut data = Vec::with_capacity(per_class * classes * cfg.t_len * cfg.feat_dim);
            let mut labels = Vec::with_capacity(per_class * classes);
            for (c, &mean) in means.iter().enumerate() {
                for _ in 0..per_class {
                    for _ in 0..cfg.t_len * cfg.feat_dim {
                        // round through f32 so file round-trips are lossless
                        let v = mean + cfg.noise_std * rng.normal();
                        data.push(v as f32 as f64);
                    }
                    labels.push(c);
                }
            }
            SequenceBatch::new(cfg.t_len, cfg.feat_dim, classes, data, labels)
        };
        let train = make_split(cfg.train_per_class)?;
        let val = make_split(cfg.val_per_class)?;
        let test = make_split(cfg.test_per_class)?;
        subtasks.push(Subtask {
            id: s,
            original_classes: (s * classes..(s + 1) * classes).collect(),
            train,
            val,
            test,
        });
    }
    // Synthetic sequences are not pixel streams; record the identity
    // permutation seed for the manifest.
    SubtaskStream::new(subtasks, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let cfg = SyntheticConfig::two_subtask_pm2(5);
        let a = build_synthetic_stream(&cfg).unwrap();
        let b = build_synthetic_stream(&cfg).unwrap();
        for s in 0..a.len() {
            assert_eq!(
                a.subtask(s).train.raw_data(),
                b.subtask(s).train.raw_data()
            );
            assert_eq!(a.subtask(s).test.labels(), b.subtask(s).test.labels());
        }
    }

    #[test]
    fn zero_variance_collapses_classes() {
        let mut cfg = SyntheticConfig::two_subtask_pm2(1);
        cfg.noise_std = 0.0;
        let stream = build_synthetic_stream(&cfg).unwrap();
        let train = &stream.subtask(0).train;
        // all sequences of one class are identical
        let first_of_class: Vec<&[f64]> = (0..train.len())
            .filter(|&i| train.labels()[i] == 0)
            .map(|i| train.sequence_data(i))
            .collect();
        for w in first_of_class.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn mean_threshold_classifier_separates_classes() {
        // Sequence-mean thresholding should reach >= 99% on every subtask.
        let cfg = SyntheticConfig::two_subtask_pm2(7);
        let stream = build_synthetic_stream(&cfg).unwrap();
        for s in 0..stream.len() {
            let split = &stream.subtask(s).test;
            let threshold: f64 =
                (cfg.class_means[s][0] + cfg.class_means[s][1]) / 2.0;
            let mut correct = 0;
            for i in 0..split.len() {
                let xs = split.sequence_data(i);
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let pred = usize::from(mean > threshold);
                if pred == split.labels()[i] {
                    correct += 1;
                }
            }
            let acc = correct as f64 / split.len() as f64;
            assert!(acc >= 0.99, "subtask {s} accuracy {acc}");
        }
    }

    #[test]
    fn degenerate_configs_rejected() {
        let mut cfg = SyntheticConfig::two_subtask_pm2(1);
        cfg.noise_std = -1.0;
        assert!(build_synthetic_stream(&cfg).is_err());
        let mut cfg = SyntheticConfig::two_subtask_pm2(1);
        cfg.noise_std = f64::NAN;
        assert!(build_synthetic_stream(&cfg).is_err());
        let mut cfg = SyntheticConfig::two_subtask_pm2(1);
        cfg.class_means = vec![vec![0.0, 1.0], vec![2.0]];
        assert!(build_synthetic_stream(&cfg).is_err());
    }

    #[test]
    fn distinct_subtasks_have_disjoint_original_classes() {
        let cfg = SyntheticConfig::spread(4, 2.0, 3);
        let stream = build_synthetic_stream(&cfg).unwrap();
        let mut all: Vec<usize> = stream
            .subtasks()
            .iter()
            .flat_map(|s| s.original_classes.clone())
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
    }
}
