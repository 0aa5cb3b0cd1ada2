//! Experiment harness: configuration, the sequential-training runner,
//! metrics and forgetting reports, CSV emission and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod runner;

pub use checkpoint::{decode_model, encode_model, sha256_hex, TrainedModel};
pub use config::{DatasetSpec, ExperimentConfig, ModelKind, SEED_ENV_VAR};
pub use metrics::{
    emit_csv, forgetting_report, render_pairedplot_csv, render_runs_csv, ForgettingReport,
    MetricsTable, SubtaskMetrics,
};
pub use runner::{
    build_stream, evaluate, run_experiment, run_lambda_sweep, run_on_stream, Gating, RunOutcome,
};
