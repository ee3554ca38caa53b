//! `idbaseline`: train, evaluate and verify policy-gradient baselines for
//! input-driven environments.
//!
//! Exit codes: 0 success, 1 failed check or runtime error, 2 usage or configuration error.

mod check;
mod eval;
mod inputs;
mod run;
mod train;
mod variance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use idbaseline::config::ExperimentConfig;

/// Environment variable naming the default root for run directories.
pub const OUTPUT_ROOT_VAR: &str = "IDBASELINE_OUTPUT";

#[derive(Parser)]
#[command(name = "idbaseline", version, about = "Input-dependent baselines for policy gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write a run directory.
    Train(train::TrainArgs),
    /// Evaluate a trained policy or a reference controller on held-out inputs.
    Eval(eval::EvalArgs),
    /// Compare gradient variance of several baselines on a frozen policy.
    VarianceReport(variance::VarianceArgs),
    /// Run a verification suite.
    Check(check::CheckArgs),
    /// Write input sequences as CSV files.
    GenInputs(inputs::GenInputsArgs),
}

/// Configuration layering shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment preset (gridworld, motivating2, loadbalance10, abr).
    #[arg(long = "env")]
    pub preset: Option<String>,
    /// Baseline kind (none, state, multi, meta, oracle).
    #[arg(long)]
    pub baseline: Option<String>,
    /// Training iterations.
    #[arg(long)]
    pub iters: Option<u64>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted override, e.g. `train.lr=3e-4` or `env.horizon=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        if let Some(p) = &self.preset {
            o.push(format!("preset=\"{p}\""));
        }
        if let Some(b) = &self.baseline {
            o.push(format!("train.baseline.kind=\"{b}\""));
        }
        if let Some(i) = self.iters {
            o.push(format!("train.iterations={i}"));
        }
        if let Some(s) = self.seed {
            o.push(format!("train.seed={s}"));
        }
        o.extend(self.set.iter().cloned());
        o
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        self.resolve_over(None)
    }

    /// Like [`resolve`](Self::resolve), but reads `base` when no `--config` is given.
    pub fn resolve_over(&self, base: Option<&std::path::Path>) -> Result<ExperimentConfig, CliError> {
        let text = match self.config.as_deref().or(base) {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        ExperimentConfig::from_toml_str(&text, &self.overrides()).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// A check did not pass (exit 1).
    CheckFailed,
    /// Anything that went wrong while doing the work (exit 1).
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::VarianceReport(a) => variance::run(a),
        Command::Check(a) => check::run(a),
        Command::GenInputs(a) => inputs::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::CheckFailed) => ExitCode::from(1),
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
