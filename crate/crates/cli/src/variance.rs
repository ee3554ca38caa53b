use std::path::PathBuf;

use clap::{Args, ValueEnum};
use idbaseline::analysis::analytic_gap;
use idbaseline::baselines::{BaselineConfig, BaselineKind, BaselineModel};
use idbaseline::envs::EnvConfig;
use idbaseline::nn::MlpParams;
use idbaseline::rng::{rng_from, stream};
use idbaseline::trainer::{fit_baseline_fresh, fit_baseline_frozen, paired_variance, training_inputs, Visitation};
use serde::Serialize;

use crate::run::{self, BASELINE_FILE, POLICY_FILE};
use crate::{CliError, ConfigArgs};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VisitationArg {
    Undiscounted,
    Discounted,
}

#[derive(Args, Debug)]
pub struct VarianceArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Policy checkpoint file, instead of a run.
    #[arg(long, conflicts_with = "run")]
    pub policy: Option<PathBuf>,
    /// Measure at the all-zero policy (uniform actions).
    #[arg(long, conflicts_with_all = ["run", "policy"])]
    pub zero_policy: bool,
    /// Baseline kinds to compare; the first is the reference row.
    #[arg(long, value_delimiter = ',', default_value = "state,multi")]
    pub kinds: Vec<String>,
    /// Rollouts per kind.
    #[arg(long, default_value_t = 64)]
    pub rollouts: usize,
    /// Rollouts sharing one input sequence.
    #[arg(long, default_value_t = 8)]
    pub per_input: usize,
    /// Baseline fitting iterations on the frozen policy for kinds not loaded from the run.
    /// Multi-value networks fit on the measured sequences, state and meta on fresh ones.
    #[arg(long, default_value_t = 200)]
    pub fit_iters: u64,
    /// Step weighting (default: the config's).
    #[arg(long, value_enum)]
    pub visitation: Option<VisitationArg>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Serialize)]
struct Row {
    kind: BaselineKind,
    trace_of_covariance: f64,
    /// Reference trace divided by this row's trace.
    reduction: f64,
    rollouts: usize,
    source: &'static str,
}

pub fn run(args: VarianceArgs) -> Result<(), CliError> {
    let (cfg, policy, baseline_ckpt) = match &args.run {
        Some(dir) => {
            let ckpt_dir = run::find_checkpoint(dir, args.checkpoint.as_deref())?;
            let cfg = args.config.resolve_over(Some(&dir.join(run::CONFIG_FILE)))?;
            let policy = run::load_policy(&ckpt_dir.join(POLICY_FILE))?;
            let b = run::load_checkpoint_file(&ckpt_dir.join(BASELINE_FILE)).ok();
            (cfg, policy, b)
        }
        None => {
            let cfg = args.config.resolve()?;
            let pc = cfg.train.policy_config(&cfg.env)?;
            let policy = match (&args.policy, args.zero_policy) {
                (Some(p), _) => run::load_policy(p)?,
                (None, true) => MlpParams::zeros(pc),
                (None, false) => return Err(CliError::Usage("give --run, --policy or --zero-policy".into())),
            };
            (cfg, policy, None)
        }
    };
    let env = &cfg.env;
    if policy.config().input_dim() != env.obs_dim() || policy.config().output_dim() != env.num_actions() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "policy dimensions {}->{} do not match environment {}->{}",
            policy.config().input_dim(),
            policy.config().output_dim(),
            env.obs_dim(),
            env.num_actions()
        )));
    }
    if args.per_input == 0 || !args.rollouts.is_multiple_of(args.per_input) || args.rollouts < 2 {
        return Err(CliError::Usage("--rollouts must be a positive multiple of --per-input and at least 2".into()));
    }
    let kinds = args
        .kinds
        .iter()
        .map(|k| BaselineKind::parse(k.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if kinds.is_empty() {
        return Err(CliError::Usage("--kinds is empty".into()));
    }
    let visitation = match args.visitation {
        Some(VisitationArg::Undiscounted) => Visitation::Undiscounted,
        Some(VisitationArg::Discounted) => Visitation::Discounted,
        None => cfg.train.visitation,
    };
    let seed = cfg.train.seed;
    let gamma = cfg.train.gamma;
    let inputs = training_inputs(env, args.rollouts / args.per_input, seed)?;
    let ids: Vec<u64> = inputs.iter().map(|i| i.id()).collect();

    let mut models = Vec::new();
    let mut sources = Vec::new();
    for &kind in &kinds {
        let bcfg = BaselineConfig {
            kind,
            ..cfg.train.baseline.clone()
        };
        let loaded = baseline_ckpt
            .as_ref()
            .filter(|c| c.kind == kind.name())
            .map(|c| BaselineModel::from_checkpoint(c, &bcfg))
            .transpose()?;
        let (model, source) = match loaded {
            Some(m) => (m, "checkpoint"),
            None => {
                let mut rng = rng_from(seed, &[stream::INIT, 100 + kind as u64]);
                let mut m = BaselineModel::new(&bcfg, env.obs_dim(), &ids, &mut rng)?;
                let trainable = matches!(kind, BaselineKind::State | BaselineKind::Multi | BaselineKind::Meta);
                if kind == BaselineKind::Multi {
                    fit_baseline_frozen(&policy, env, &mut m, &inputs, args.per_input, gamma, args.fit_iters, seed)?;
                } else if trainable {
                    fit_baseline_fresh(&policy, env, &mut m, inputs.len(), args.per_input, gamma, args.fit_iters, seed)?;
                }
                (m, if trainable { "fitted" } else { "analytic" })
            }
        };
        models.push(model);
        sources.push(source);
    }
    let refs: Vec<&BaselineModel> = models.iter().collect();
    let stats = paired_variance(&policy, env, &refs, &inputs, args.per_input, gamma, visitation, seed)?;
    let reference = stats[0].trace_of_covariance;
    let rows: Vec<Row> = kinds
        .iter()
        .zip(&stats)
        .zip(&sources)
        .map(|((k, s), src)| Row {
            kind: *k,
            trace_of_covariance: s.trace_of_covariance,
            reduction: reference / s.trace_of_covariance,
            rollouts: s.sample_count,
            source: src,
        })
        .collect();
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        println!("{:<8} {:>16} {:>10} {:>9}  baseline", "kind", "trace(cov)", "reduction", "rollouts");
        for r in &rows {
            println!(
                "{:<8} {:>16.6e} {:>10.3} {:>9}  {}",
                r.kind.name(),
                r.trace_of_covariance,
                r.reduction,
                r.rollouts,
                r.source
            );
        }
    }
    cross_check(env, &kinds, &rows, gamma, args.zero_policy, visitation);
    Ok(())
}

/// At the zero policy on the grid walker only the two output biases carry
/// gradient, each with variance gap `analytic_gap(γ)` between no baseline and the oracle.
fn cross_check(env: &EnvConfig, kinds: &[BaselineKind], rows: &[Row], gamma: f64, zero: bool, visitation: Visitation) {
    if !matches!(env, EnvConfig::Gridworld(_)) || !zero || visitation != Visitation::Discounted {
        return;
    }
    let find = |k| kinds.iter().position(|x| *x == k);
    if let (Some(n), Some(o)) = (find(BaselineKind::None), find(BaselineKind::Oracle)) {
        let diff = rows[n].trace_of_covariance - rows[o].trace_of_covariance;
        println!(
            "cross-check: trace(none) - trace(oracle) = {:.4}; two bias coordinates predict 2 x {:.4} = {:.4}",
            diff,
            analytic_gap(gamma),
            2.0 * analytic_gap(gamma)
        );
    }
}
