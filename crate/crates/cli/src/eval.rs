use std::path::PathBuf;

use clap::{Args, ValueEnum};
use idbaseline::analysis::{evaluate_controller, policy_heatmap, queue_grid, Controller, EvalReport};
use idbaseline::envs::EnvConfig;
use idbaseline::nn::MlpParams;
use idbaseline::rng::{derive_seed, stream};
use idbaseline::trainer::test_inputs;

use crate::run::{self, POLICY_FILE};
use crate::{CliError, ConfigArgs};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ControllerArg {
    Softmax,
    Greedy,
    ShortestQueue,
    Random,
    Mpc,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory; its config and latest checkpoint are used.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint directory inside the run (default: latest).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Policy checkpoint file, instead of a run.
    #[arg(long, conflicts_with = "run")]
    pub policy: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "softmax")]
    pub controller: ControllerArg,
    /// MPC look-ahead in chunks.
    #[arg(long, default_value_t = 5)]
    pub mpc_horizon: usize,
    /// Held-out sequences (default: the config's test_sequences).
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Episodes per sequence (default: the config's eval_episodes).
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Write a two-server policy heatmap to this CSV file.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Largest queue backlog on the heatmap grid, in work units.
    #[arg(long, default_value_t = 2000.0)]
    pub heatmap_max: f64,
    #[arg(long, default_value_t = 21)]
    pub heatmap_points: usize,
    /// Print the full report as JSON.
    #[arg(long)]
    pub json: bool,
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let (cfg, policy) = match &args.run {
        Some(dir) => {
            let ckpt_dir = run::find_checkpoint(dir, args.checkpoint.as_deref())?;
            let cfg = args.config.resolve_over(Some(&dir.join(run::CONFIG_FILE)))?;
            (cfg, Some(run::load_policy(&ckpt_dir.join(POLICY_FILE))?))
        }
        None => {
            let cfg = args.config.resolve()?;
            let policy = args.policy.as_deref().map(run::load_policy).transpose()?;
            (cfg, policy)
        }
    };
    let controller = match args.controller {
        ControllerArg::Softmax => Controller::Softmax,
        ControllerArg::Greedy => Controller::Greedy,
        ControllerArg::ShortestQueue => Controller::ShortestQueue,
        ControllerArg::Random => Controller::Random,
        ControllerArg::Mpc => Controller::Mpc(args.mpc_horizon),
    };
    let needs_policy = matches!(controller, Controller::Softmax | Controller::Greedy);
    if needs_policy && policy.is_none() {
        return Err(CliError::Usage("a softmax or greedy evaluation needs --run or --policy".into()));
    }
    let seed = cfg.train.seed;
    let tests = test_inputs(&cfg.env, args.sequences.unwrap_or(cfg.test_sequences), seed)?;
    let episodes = args.episodes.unwrap_or(cfg.eval_episodes);
    let report = evaluate_controller(
        controller,
        policy.as_ref().filter(|_| needs_policy),
        &cfg.env,
        &tests,
        episodes,
        derive_seed(seed, &[stream::EVAL]),
    )?;
    print_report(&report, args.json)?;
    if let Some(path) = &args.heatmap {
        write_heatmap(&cfg.env, policy.as_ref(), path, args.heatmap_max, args.heatmap_points)?;
    }
    Ok(())
}

fn print_report(r: &EvalReport, json: bool) -> Result<(), CliError> {
    if json {
        println!("{}", serde_json::to_string_pretty(r)?);
    } else {
        println!(
            "mean total reward {:.4}  std {:.4}  over {} episodes on {} sequences",
            r.mean,
            r.std,
            r.episodes,
            r.per_sequence.len()
        );
    }
    Ok(())
}

fn write_heatmap(
    env: &EnvConfig,
    policy: Option<&MlpParams>,
    path: &std::path::Path,
    max: f64,
    points: usize,
) -> Result<(), CliError> {
    let (EnvConfig::LoadBalance(lb), Some(policy)) = (env, policy) else {
        return Err(CliError::Usage("--heatmap needs a load-balance policy".into()));
    };
    let h = policy_heatmap(policy, lb, &queue_grid(max, points))?;
    run::write_atomic(path, h.to_csv().as_bytes())?;
    let (agree, n) = h.shortest_queue_agreement(0.2);
    println!(
        "heatmap written to {} ({} of {} grid points with >=20% queue difference agree with shortest queue)",
        path.display(),
        (agree * n as f64).round() as usize,
        n
    );
    Ok(())
}
