use clap::Args;
use idbaseline::analysis::checks::{run_suite, SuiteOptions, SUITES};

use crate::CliError;

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// gridworld, lemma1, trpo, optimality, bias, gradcheck or all.
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Discount factors for the gridworld gap (repeatable; default 0.5 and 0.9).
    #[arg(long = "gamma")]
    pub gammas: Vec<f64>,
    /// Trajectories for the gridworld gap.
    #[arg(long, default_value_t = 1_000_000)]
    pub trajectories: usize,
    /// Rollouts for each Monte Carlo bias estimate.
    #[arg(long, default_value_t = 10_000)]
    pub rollouts: usize,
    /// Random cases for the gradient check.
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    /// Random perturbations of the optimal baseline.
    #[arg(long, default_value_t = 100)]
    pub perturbations: usize,
    #[arg(long)]
    pub json: bool,
}

pub fn run(args: CheckArgs) -> Result<(), CliError> {
    if args.suite != "all" && !SUITES.contains(&args.suite.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown suite {:?} (known: {}, all)",
            args.suite,
            SUITES.join(", ")
        )));
    }
    if args.gammas.iter().any(|g| !(0.0..1.0).contains(g)) {
        return Err(CliError::Usage("--gamma must lie in [0, 1)".into()));
    }
    let mut opts = SuiteOptions {
        seed: args.seed,
        gap_trajectories: args.trajectories,
        bias_rollouts: args.rollouts,
        gradcheck_cases: args.cases,
        perturbations: args.perturbations,
        ..Default::default()
    };
    if !args.gammas.is_empty() {
        opts.gammas = args.gammas.clone();
    }
    let outcomes = run_suite(&args.suite, &opts)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&outcomes)?);
    } else {
        for o in &outcomes {
            let status = if o.passed { "PASS" } else { "FAIL" };
            println!("{status} [{}] {}: {}", o.suite, o.name, o.detail);
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} checks, {} failed", outcomes.len(), failed);
    if failed > 0 {
        return Err(CliError::CheckFailed);
    }
    Ok(())
}
