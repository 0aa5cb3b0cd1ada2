//! Experiment CLI: sequential continual-learning runs, λ sweeps, gradient
//! checks and dataset generation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 IO failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gimcl::data::{io as data_io, synthetic::SyntheticConfig};
use gimcl::data::digits::{build_digit_stream, generate_digits, DigitStreamConfig};
use gimcl::error::Error;
use gimcl::harness::{
    forgetting_report, run_experiment, run_lambda_sweep, ExperimentConfig, ModelKind,
};
use gimcl::numcore::Rng;

#[derive(Parser)]
#[command(
    name = "gimcl",
    version,
    about = "Continual-learning experiments with gated incremental memories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        /// Plain-text key=value config file (# starts a comment).
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed (GIMCL_SEED also overrides).
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluate GIM with ground-truth subtask routing.
        #[arg(long)]
        oracle_gating: bool,
        /// Override the EWC penalty weight λ.
        #[arg(long)]
        lambda: Option<f64>,
        /// Override the model configuration.
        #[arg(long)]
        model: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment once per parameter value.
    Sweep {
        /// Parameter to sweep (only `lambda` is supported).
        #[arg(long, default_value = "lambda")]
        param: String,
        /// Comma-separated values; defaults to the standard λ grid.
        #[arg(long, default_value = "0.01,0.1,0.4,1.0")]
        values: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        #[arg(long, default_value_t = 20260809)]
        seed: u64,
    },
    /// Generate a dataset directory of GIMD files.
    MakeData {
        /// digits | synthetic
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Images per class (digits only).
        #[arg(long, default_value_t = 120)]
        per_class: usize,
        /// Number of subtasks (synthetic only).
        #[arg(long, default_value_t = 2)]
        subtasks: usize,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::Contract(_) => 2,
        Error::Numeric(_) => 3,
        Error::Io(_) | Error::Format(_) => 4,
        Error::ShapeMismatch { .. } => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    oracle_gating: bool,
    lambda: Option<f64>,
    model: Option<String>,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    cfg.apply_env()?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if oracle_gating {
        cfg.oracle_gating = true;
    }
    if let Some(lambda) = lambda {
        cfg.lambda = lambda;
    }
    if let Some(model) = model {
        cfg.model = model.parse::<ModelKind>()?;
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            oracle_gating,
            lambda,
            model,
            out,
        } => {
            let cfg = load_config(&config, seed, oracle_gating, lambda, model, out)?;
            let outcome = run_experiment(&cfg)?;
            let report = forgetting_report(&outcome.table)?;
            println!(
                "model={} dataset={} seed={}",
                outcome.table.model, outcome.table.dataset, outcome.table.seed
            );
            for (row, f) in outcome.table.rows.iter().zip(&report.per_subtask) {
                println!(
                    "subtask {}: val_after={:.4} test_after={:.4} forgetting={:.4}",
                    row.subtask + 1,
                    row.val_after.unwrap(),
                    row.test_after.unwrap(),
                    f
                );
            }
            println!(
                "mean: val_after={:.4} test_after={:.4} forgetting={:.4}",
                outcome.table.mean_val().unwrap(),
                outcome.table.mean_test().unwrap(),
                report.mean
            );
            println!("artifacts written to {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Sweep {
            param,
            values,
            config,
            out,
        } => {
            if param != "lambda" {
                return Err(Error::config(format!(
                    "unsupported sweep parameter '{param}' (only lambda)"
                )));
            }
            let parsed: Result<Vec<f64>, Error> = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::config(format!("bad sweep value '{v}'")))
                })
                .collect();
            let cfg = load_config(&config, None, false, None, None, out)?;
            let outcomes = run_lambda_sweep(&cfg, &parsed?)?;
            for outcome in &outcomes {
                let report = forgetting_report(&outcome.table)?;
                println!(
                    "lambda run: mean_val={:.4} mean_test={:.4} mean_forgetting={:.4} ({})",
                    outcome.table.mean_val().unwrap(),
                    outcome.table.mean_test().unwrap(),
                    report.mean,
                    outcome.out_dir.display()
                );
            }
            println!("sweep summary: {}", cfg.out_dir.join("sweep.csv").display());
            Ok(())
        }
        Command::Gradcheck { seed } => {
            let results = gimcl::gradcheck::run_all(seed)?;
            let mut failed = 0;
            for r in &results {
                println!("{r}");
                if !r.passed() {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::numeric(format!(
                    "{failed}/{} gradient checks failed",
                    results.len()
                )));
            }
            println!("all {} gradient checks passed", results.len());
            Ok(())
        }
        Command::MakeData {
            kind,
            out,
            seed,
            per_class,
            subtasks,
        } => {
            let stream = match kind.as_str() {
                "digits" => {
                    let source = generate_digits(&Rng::new(seed), per_class);
                    build_digit_stream(
                        &source,
                        &DigitStreamConfig {
                            min_per_class: 20.min(per_class),
                            permutation_seed: seed.wrapping_add(1),
                            split_seed: seed.wrapping_add(2),
                        },
                    )?
                }
                "synthetic" => {
                    let cfg = SyntheticConfig::spread(subtasks, 4.0, seed);
                    gimcl::data::build_synthetic_stream(&cfg)?
                }
                other => {
                    return Err(Error::config(format!(
                        "unknown dataset kind '{other}' (digits|synthetic)"
                    )))
                }
            };
            data_io::write_stream(&stream, &out)?;
            println!(
                "wrote {} subtasks to {} (manifest.txt lists the files)",
                stream.len(),
                out.display()
            );
            Ok(())
        }
    }
}
