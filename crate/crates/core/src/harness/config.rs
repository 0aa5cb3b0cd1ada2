//! Experiment configuration: plain-text `key=value` files, environment and
//! CLI overrides, and full manifest serialization.
//!
//! Every field has a desk-scale default, but whatever values end up being
//! used are recorded in the emitted run manifest, so outputs never depend on
//! implicit defaults.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::CellKind;
use crate::numcore::OptimizerKind;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV_VAR: &str = "GIMCL_SEED";

/// The six model configurations of the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Lstm,
    Lmn,
    EwcLstm,
    EwcLmn,
    GimLstm,
    GimLmn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Lstm,
        ModelKind::Lmn,
        ModelKind::EwcLstm,
        ModelKind::EwcLmn,
        ModelKind::GimLstm,
        ModelKind::GimLmn,
    ];

    pub fn cell_kind(self) -> CellKind {
        match self {
            ModelKind::Lstm | ModelKind::EwcLstm | ModelKind::GimLstm => CellKind::Lstm,
            ModelKind::Lmn | ModelKind::EwcLmn | ModelKind::GimLmn => CellKind::Lmn,
        }
    }

    pub fn is_gim(self) -> bool {
        matches!(self, ModelKind::GimLstm | ModelKind::GimLmn)
    }

    pub fn is_ewc(self) -> bool {
        matches!(self, ModelKind::EwcLstm | ModelKind::EwcLmn)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(ModelKind::Lstm),
            "lmn" => Ok(ModelKind::Lmn),
            "ewc-lstm" => Ok(ModelKind::EwcLstm),
            "ewc-lmn" => Ok(ModelKind::EwcLmn),
            "gim-lstm" => Ok(ModelKind::GimLstm),
            "gim-lmn" => Ok(ModelKind::GimLmn),
            other => Err(Error::config(format!(
                "unknown model '{other}' (expected lstm|lmn|ewc-lstm|ewc-lmn|gim-lstm|gim-lmn)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Lmn => "lmn",
            ModelKind::EwcLstm => "ewc-lstm",
            ModelKind::EwcLmn => "ewc-lmn",
            ModelKind::GimLstm => "gim-lstm",
            ModelKind::GimLmn => "gim-lmn",
        };
        write!(f, "{s}")
    }
}

/// Where the subtask stream comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// Synthesized 8×8 digit images, five class-pair subtasks, T=64.
    Digits {
        per_class: usize,
        permutation_seed: u64,
        split_seed: u64,
        data_seed: u64,
    },
    /// Gaussian drift stream with evenly spaced subtask centers.
    Synthetic {
        subtasks: usize,
        spacing: f64,
        noise_std: f64,
        t_len: usize,
        feat_dim: usize,
        train_per_class: usize,
        val_per_class: usize,
        test_per_class: usize,
        seed: u64,
    },
    /// A directory of GIMD files written by `make-data`.
    Dir { path: PathBuf },
}

impl DatasetSpec {
    pub fn default_digits() -> Self {
        DatasetSpec::Digits {
            per_class: 120,
            permutation_seed: 1,
            split_seed: 2,
            data_seed: 3,
        }
    }

    pub fn default_synthetic() -> Self {
        DatasetSpec::Synthetic {
            subtasks: 2,
            spacing: 4.0,
            noise_std: 1.0,
            t_len: 10,
            feat_dim: 4,
            train_per_class: 60,
            val_per_class: 20,
            test_per_class: 20,
            seed: 7,
        }
    }

    /// Short name used in CSV rows.
    pub fn label(&self) -> &'static str {
        match self {
            DatasetSpec::Digits { .. } => "digits",
            DatasetSpec::Synthetic { .. } => "synthetic",
            DatasetSpec::Dir { .. } => "dir",
        }
    }
}

/// Fully resolved experiment settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub hidden: usize,
    pub functional: usize,
    pub memory: usize,
    pub ae_hidden: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub ae_lr: f64,
    pub ae_chunks: usize,
    pub momentum: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub beta: f64,
    pub fisher_samples: usize,
    pub clip: Option<f64>,
    pub seed: u64,
    pub oracle_gating: bool,
    pub dataset: DatasetSpec,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::GimLstm,
            hidden: 32,
            functional: 32,
            memory: 32,
            ae_hidden: 64,
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            ae_lr: 1e-4,
            ae_chunks: 1,
            momentum: 0.9,
            l2: 0.0,
            batch_size: 32,
            epochs: 10,
            lambda: 0.4,
            beta: 0.1,
            fisher_samples: 256,
            clip: None,
            seed: 42,
            oracle_gating: false,
            dataset: DatasetSpec::default_digits(),
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a `key=value` config file (`#` starts a comment).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key=value", line_no + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", line_no + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "model" => self.model = value.parse()?,
            "hidden" => {
                self.hidden = num(key, value)?;
                self.functional = self.hidden;
                self.memory = self.hidden;
            }
            "functional" => self.functional = num(key, value)?,
            "memory" => self.memory = num(key, value)?,
            "ae_hidden" => self.ae_hidden = num(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => self.lr = num(key, value)?,
            "ae_lr" => self.ae_lr = num(key, value)?,
            "ae_chunks" => self.ae_chunks = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            "batch" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "fisher_samples" => self.fisher_samples = num(key, value)?,
            "clip" => {
                self.clip = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "seed" => self.seed = num(key, value)?,
            "oracle_gating" => self.oracle_gating = num(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "data.kind" => {
                self.dataset = match value {
                    "digits" => DatasetSpec::default_digits(),
                    "synthetic" => DatasetSpec::default_synthetic(),
                    "dir" => DatasetSpec::Dir {
                        path: PathBuf::new(),
                    },
                    other => {
                        return Err(Error::config(format!(
                            "unknown data.kind '{other}' (digits|synthetic|dir)"
                        )))
                    }
                }
            }
            "data.path" => match &mut self.dataset {
                DatasetSpec::Dir { path } => *path = PathBuf::from(value),
                _ => return Err(Error::config("data.path only applies to data.kind=dir")),
            },
            "data.per_class" => match &mut self.dataset {
                DatasetSpec::Digits { per_class, .. } => *per_class = num(key, value)?,
                _ => return Err(Error::config("data.per_class only applies to digits")),
            },
            "data.permutation_seed" => match &mut self.dataset {
                DatasetSpec::Digits {
                    permutation_seed, ..
                } => *permutation_seed = num(key, value)?,
                _ => {
                    return Err(Error::config(
                        "data.permutation_seed only applies to digits",
                    ))
                }
            },
            "data.split_seed" => match &mut self.dataset {
                DatasetSpec::Digits { split_seed, .. } => *split_seed = num(key, value)?,
                _ => return Err(Error::config("data.split_seed only applies to digits")),
            },
            "data.seed" => match &mut self.dataset {
                DatasetSpec::Digits { data_seed, .. } => *data_seed = num(key, value)?,
                DatasetSpec::Synthetic { seed, .. } => *seed = num(key, value)?,
                _ => return Err(Error::config("data.seed does not apply to data.kind=dir")),
            },
            "data.subtasks" => match &mut self.dataset {
                DatasetSpec::Synthetic { subtasks, .. } => *subtasks = num(key, value)?,
                _ => return Err(Error::config("data.subtasks only applies to synthetic")),
            },
            "data.spacing" => match &mut self.dataset {
                DatasetSpec::Synthetic { spacing, .. } => *spacing = num(key, value)?,
                _ => return Err(Error::config("data.spacing only applies to synthetic")),
            },
            "data.noise" => match &mut self.dataset {
                DatasetSpec::Synthetic { noise_std, .. } => *noise_std = num(key, value)?,
                _ => return Err(Error::config("data.noise only applies to synthetic")),
            },
            "data.t" => match &mut self.dataset {
                DatasetSpec::Synthetic { t_len, .. } => *t_len = num(key, value)?,
                _ => return Err(Error::config("data.t only applies to synthetic")),
            },
            "data.d" => match &mut self.dataset {
                DatasetSpec::Synthetic { feat_dim, .. } => *feat_dim = num(key, value)?,
                _ => return Err(Error::config("data.d only applies to synthetic")),
            },
            "data.train_per_class" => match &mut self.dataset {
                DatasetSpec::Synthetic { train_per_class, .. } => {
                    *train_per_class = num(key, value)?
                }
                _ => {
                    return Err(Error::config(
                        "data.train_per_class only applies to synthetic",
                    ))
                }
            },
            "data.val_per_class" => match &mut self.dataset {
                DatasetSpec::Synthetic { val_per_class, .. } => *val_per_class = num(key, value)?,
                _ => {
                    return Err(Error::config(
                        "data.val_per_class only applies to synthetic",
                    ))
                }
            },
            "data.test_per_class" => match &mut self.dataset {
                DatasetSpec::Synthetic { test_per_class, .. } => {
                    *test_per_class = num(key, value)?
                }
                _ => {
                    return Err(Error::config(
                        "data.test_per_class only applies to synthetic",
                    ))
                }
            },
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies the `GIMCL_SEED` environment override if present.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(value) = std::env::var(SEED_ENV_VAR) {
            self.seed = value
                .parse()
                .map_err(|_| Error::config(format!("bad {SEED_ENV_VAR} value '{value}'")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.functional == 0 || self.memory == 0 || self.ae_hidden == 0 {
            return Err(Error::config("hidden sizes must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if self.ae_chunks == 0 {
            return Err(Error::config("ae_chunks must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr must be finite and >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda must be finite and >= 0"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta must be finite and >= 0"));
        }
        if let DatasetSpec::Dir { path } = &self.dataset {
            if path.as_os_str().is_empty() {
                return Err(Error::config("data.kind=dir requires data.path"));
            }
        }
        Ok(())
    }

    /// Every resolved field as `key=value` lines for the run manifest.
    pub fn manifest_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("model={}", self.model),
            format!("hidden={}", self.hidden),
            format!("functional={}", self.functional),
            format!("memory={}", self.memory),
            format!("ae_hidden={}", self.ae_hidden),
            format!("optimizer={}", self.optimizer),
            format!("lr={}", self.lr),
            format!("ae_lr={}", self.ae_lr),
            format!("ae_chunks={}", self.ae_chunks),
            format!("momentum={}", self.momentum),
            format!("l2={}", self.l2),
            format!("batch={}", self.batch_size),
            format!("epochs={}", self.epochs),
            format!("lambda={}", self.lambda),
            format!("beta={}", self.beta),
            format!("fisher_samples={}", self.fisher_samples),
            format!(
                "clip={}",
                self.clip.map_or("none".to_string(), |c| c.to_string())
            ),
            format!("seed={}", self.seed),
            format!("oracle_gating={}", self.oracle_gating),
            format!("out={}", self.out_dir.display()),
        ];
        match &self.dataset {
            DatasetSpec::Digits {
                per_class,
                permutation_seed,
                split_seed,
                data_seed,
            } => {
                lines.push("data.kind=digits".to_string());
                lines.push(format!("data.per_class={per_class}"));
                lines.push(format!("data.permutation_seed={permutation_seed}"));
                lines.push(format!("data.split_seed={split_seed}"));
                lines.push(format!("data.seed={data_seed}"));
            }
            DatasetSpec::Synthetic {
                subtasks,
                spacing,
                noise_std,
                t_len,
                feat_dim,
                train_per_class,
                val_per_class,
                test_per_class,
                seed,
            } => {
                lines.push("data.kind=synthetic".to_string());
                lines.push(format!("data.subtasks={subtasks}"));
                lines.push(format!("data.spacing={spacing}"));
                lines.push(format!("data.noise={noise_std}"));
                lines.push(format!("data.t={t_len}"));
                lines.push(format!("data.d={feat_dim}"));
                lines.push(format!("data.train_per_class={train_per_class}"));
                lines.push(format!("data.val_per_class={val_per_class}"));
                lines.push(format!("data.test_per_class={test_per_class}"));
                lines.push(format!("data.seed={seed}"));
            }
            DatasetSpec::Dir { path } => {
                lines.push("data.kind=dir".to_string());
                lines.push(format!("data.path={}", path.display()));
            }
        }
        lines
    }
}
