use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use idbaseline::analysis::evaluate_policy;
use idbaseline::config::ExperimentConfig;
use idbaseline::rng::{derive_seed, stream};
use idbaseline::trainer::{test_inputs, TrainState};
use serde::Serialize;

use crate::run::{self, FinalSummary, RunManifest};
use crate::{CliError, ConfigArgs};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory (default: `$IDBASELINE_OUTPUT/<name>` or `<output_dir>/<name>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run name used under the output root.
    #[arg(long)]
    pub name: Option<String>,
    /// Replace an existing run directory.
    #[arg(long)]
    pub force: bool,
    /// Suppress per-evaluation progress lines.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Serialize)]
struct EvalRecord {
    iteration: u64,
    mean: f64,
    std: f64,
    episodes: usize,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let name = args.name.clone().unwrap_or_else(|| {
        format!("{}-{}-s{}", cfg.preset, cfg.train.baseline.kind, cfg.train.seed)
    });
    let dir = run::run_dir(args.out.as_deref(), &name, &cfg);
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        if !args.force {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "{} exists and is not empty (use --force to replace it)",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    run::write_atomic(&dir.join(run::CONFIG_FILE), cfg.to_toml()?.as_bytes())?;

    let started = run::unix_now();
    let mut summary = FinalSummary {
        iterations: 0,
        last_mean_return: None,
        eval_mean: None,
        eval_std: None,
    };
    let mut checkpoints = Vec::new();
    let outcome = train_loop(&cfg, &dir, args.quiet, &mut summary, &mut checkpoints);
    let manifest = RunManifest {
        status: if outcome.is_ok() { "completed" } else { "failed" }.into(),
        error: outcome.as_ref().err().map(|e| format!("{e:#}")),
        code_version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: run::unix_now(),
        config: cfg,
        summary,
        checkpoints,
    };
    run::write_atomic(&dir.join(run::MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    outcome?;
    println!("run written to {}", dir.display());
    Ok(())
}

fn train_loop(
    cfg: &ExperimentConfig,
    dir: &Path,
    quiet: bool,
    summary: &mut FinalSummary,
    checkpoints: &mut Vec<String>,
) -> anyhow::Result<()> {
    let train = &cfg.train;
    let mut state = TrainState::new(train, &cfg.env)?;
    let tests = test_inputs(&cfg.env, cfg.test_sequences, train.seed)?;
    let mut metrics = fs::File::create(dir.join(run::METRICS_FILE))?;
    let mut evals = fs::File::create(dir.join(run::EVAL_FILE))?;
    let eval_seed = derive_seed(train.seed, &[stream::EVAL]);

    let mut evaluate = |state: &TrainState, summary: &mut FinalSummary| -> anyhow::Result<()> {
        let r = evaluate_policy(&state.policy, &cfg.env, &tests, cfg.eval_episodes, false, eval_seed)?;
        let rec = EvalRecord {
            iteration: state.iteration,
            mean: r.mean,
            std: r.std,
            episodes: r.episodes,
        };
        writeln!(evals, "{}", serde_json::to_string(&rec)?)?;
        evals.flush()?;
        if !quiet {
            println!("iteration {:>6}  test reward {:.4} ± {:.4}", rec.iteration, rec.mean, rec.std);
        }
        summary.eval_mean = Some(r.mean);
        summary.eval_std = Some(r.std);
        Ok(())
    };

    for _ in 0..train.iterations {
        let m = state.step(train, &cfg.env)?;
        writeln!(metrics, "{}", serde_json::to_string(&m)?)?;
        metrics.flush()?;
        summary.iterations = state.iteration;
        summary.last_mean_return = Some(m.mean_return);
        let it = state.iteration;
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < train.iterations {
            checkpoints.push(run::save_checkpoint(dir, it, &state.policy, &state.baseline)?);
        }
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 && it < train.iterations {
            evaluate(&state, summary)?;
        }
    }
    checkpoints.push(run::save_checkpoint(dir, state.iteration, &state.policy, &state.baseline)?);
    evaluate(&state, summary)?;
    Ok(())
}
