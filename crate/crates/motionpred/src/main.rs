//! Command-line front end: train, eval, predict, and gradcheck.
//!
//! Failures print a single line `error[<kind>]: <message>` to stderr and
//! exit non-zero, so scripts can branch on the failure class.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use motionpred::config::{EvalSplit, RunConfig};
use motionpred::error::{Error, Result};
use motionpred::gradcheck::DEFAULT_TOLERANCE;
use motionpred::harness::{self, TrainOptions};

#[derive(Parser)]
#[command(
    name = "motionpred",
    version,
    about = "Train and evaluate a skeletal motion predictor with verified gradients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or resume) a predictor described by a TOML config.
    Train {
        /// Run configuration; missing keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        /// Directory for checkpoints.
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from this checkpoint; only training.steps may differ
        /// from the checkpointed config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override training.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint against the zero-velocity baseline.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which side of the train/validation split to evaluate;
        /// defaults to the checkpointed config's choice.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Print machine-readable JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Predict the continuation of a sequence CSV from its last observed
    /// window. The input must be preprocessed like the training data.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input sequence CSV (with its manifest sidecar).
        #[arg(long)]
        input: PathBuf,
        /// Output CSV path; a manifest sidecar is written next to it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare analytic gradients of the full training objective against
    /// central finite differences on a small model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Independent trials; trial t uses seed + t.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

impl From<SplitArg> for EvalSplit {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => EvalSplit::Train,
            SplitArg::Val => EvalSplit::Val,
            SplitArg::All => EvalSplit::All,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.message().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out_dir, resume, seed, quiet } => {
            let mut run_config = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                run_config.training.seed = seed;
            }
            harness::cmd_train(
                &run_config,
                &TrainOptions {
                    out_dir: &out_dir,
                    resume: resume.as_deref(),
                    quiet,
                },
            )?;
            Ok(())
        }
        Command::Eval { checkpoint, split, json } => {
            let outcome = harness::cmd_eval(&checkpoint, split.map(EvalSplit::from))?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&outcome.to_json())
                        .expect("report serialization cannot fail")
                );
            } else {
                print!("{}", outcome.render_table());
            }
            Ok(())
        }
        Command::Predict { checkpoint, input, output } => {
            let pred = harness::cmd_predict(&checkpoint, &input, &output)?;
            println!("wrote {} predicted frames to {}", pred.n_frames(), output.display());
            Ok(())
        }
        Command::Gradcheck { seed, trials } => {
            let mut worst = 0.0f64;
            let mut all_passed = true;
            for t in 0..trials {
                let trial_seed = seed.wrapping_add(t);
                let report = harness::cmd_gradcheck(trial_seed)?;
                println!(
                    "trial {t} (seed {trial_seed}): max relative error {:.3e}, {}",
                    report.max_relative_error,
                    if report.passed { "pass" } else { "FAIL" }
                );
                let width = report.groups.iter().map(|g| g.name.len()).max().unwrap_or(6);
                for g in &report.groups {
                    println!(
                        "  {:<width$}  analytic {:>12.6e}  numeric {:>12.6e}  rel {:>9.3e}  {}",
                        g.name,
                        g.analytic_norm,
                        g.numeric_norm,
                        g.rel_error,
                        if g.passes(DEFAULT_TOLERANCE) { "ok" } else { "FAIL" }
                    );
                }
                worst = worst.max(report.max_relative_error);
                all_passed &= report.passed;
            }
            if !all_passed {
                return Err(Error::Autodiff(format!(
                    "gradient check failed, worst relative error {worst:.3e}"
                )));
            }
            println!("all {trials} trial(s) passed, worst relative error {worst:.3e}");
            Ok(())
        }
    }
}
