//! Named check suites with fixed seeds and tolerances, shared by the command line
//! and the acceptance tests.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::enumerable::{EnumerableMdp, StepKey, TabularPolicy};
use super::gridworld::gridworld_variance_gap;
use super::theory::{
    baseline_optimality_check, exact_gradient_moments, lemma1_exact, lemma1_factorization_check,
    markov_property_check, max_relative_difference, trpo_term_constancy_check,
};
use crate::baselines::{oracle_optimal_baseline, BaselineConfig, BaselineKind, BaselineModel};
use crate::envs::EnvConfig;
use crate::nn::{gradcheck, MlpConfig, MlpParams};
use crate::rng::{rng_from, stream};
use crate::trainer::{bias_estimate, training_inputs, TrainConfig, TrainState};
use crate::{Error, Result};

pub const SUITES: &[&str] = &["gridworld", "lemma1", "trpo", "optimality", "bias", "gradcheck"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(suite: &str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Tunables for [`run_suite`]. Defaults are the documented acceptance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub gammas: Vec<f64>,
    pub gap_trajectories: usize,
    pub bias_rollouts: usize,
    pub gradcheck_cases: usize,
    pub perturbations: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gammas: vec![0.5, 0.9],
            gap_trajectories: 1_000_000,
            bias_rollouts: 10_000,
            gradcheck_cases: 100,
            perturbations: 100,
        }
    }
}

pub fn run_suite(name: &str, opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    match name {
        "gridworld" => gridworld_suite(opts),
        "lemma1" => lemma1_suite(opts),
        "trpo" => trpo_suite(opts),
        "optimality" => optimality_suite(opts),
        "bias" => bias_suite(opts),
        "gradcheck" => gradcheck_suite(opts),
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, opts)?);
            }
            Ok(out)
        }
        other => Err(Error::invalid(format!("unknown suite {other:?} (known: {}, all)", SUITES.join(", ")))),
    }
}

pub fn gridworld_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    opts.gammas
        .iter()
        .map(|&g| {
            let r = gridworld_variance_gap(g, opts.gap_trajectories, None, opts.seed)?;
            let ordered = r.v2_mc <= r.v1_mc + 3.0 * r.combined_se;
            Ok(CheckOutcome::new(
                "gridworld",
                format!("variance gap gamma={g}"),
                r.within(3.0) && ordered,
                format!(
                    "MC V1-V2 = {:.4} (V1 {:.4}, V2 {:.4}, combined SE {:.4}) vs analytic {:.4}, z = {:.2}, T = {}, N = {}",
                    r.mc_gap(),
                    r.v1_mc,
                    r.v2_mc,
                    r.combined_se,
                    r.analytic_gap,
                    r.z_score(),
                    r.horizon,
                    r.trajectories
                ),
            ))
        })
        .collect()
}

fn toy(observe: bool, seed: u64) -> Result<(EnumerableMdp, TabularPolicy, crate::rng::Rng)> {
    let mut rng = rng_from(seed, &[stream::ANALYSIS, u64::from(observe)]);
    let mdp = EnumerableMdp::toy(4, observe, &mut rng)?;
    let pol = TabularPolicy::for_mdp_random(&mdp, 1.0, &mut rng);
    Ok((mdp, pol, rng))
}

pub fn lemma1_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for observe in [true, false] {
        let (mdp, pol, _) = toy(observe, opts.seed)?;
        let case = if observe { "case 1" } else { "case 2" };
        let tv = (0..mdp.horizon)
            .map(|t| lemma1_exact(&mdp, &pol, t).map(|r| r.max_tv))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        out.push(CheckOutcome::new("lemma1", format!("exact factorization, {case}"), tv < 1e-12, format!("max TV {tv:.2e}")));

        let uniform = TabularPolicy::for_mdp_uniform(&mdp);
        let s = lemma1_factorization_check(&mdp, &uniform, 1, 40_000, opts.seed)?;
        out.push(CheckOutcome::new(
            "lemma1",
            format!("sampled factorization, {case}"),
            s.independent_at(0.01),
            format!(
                "p = {:.3}, chi2 = {:.1} on {} dof, {} bins used, {} excluded",
                s.p_value, s.chi_square, s.dof, s.bins_used, s.bins_excluded
            ),
        ));

        let leaky = mdp.clone().with_action_leak(0.9)?;
        let lt = lemma1_exact(&leaky, &pol, 1)?.max_tv;
        let ls = lemma1_factorization_check(&leaky, &uniform, 1, 40_000, opts.seed)?;
        out.push(CheckOutcome::new(
            "lemma1",
            format!("leaky negative control rejected, {case}"),
            lt > 1e-3 && !ls.independent_at(0.01),
            format!("exact TV {lt:.3}, sampled p = {:.2e}", ls.p_value),
        ));
    }
    let (mdp, pol, _) = toy(true, opts.seed)?;
    let m = markov_property_check(&mdp, &pol, 100_000, true, opts.seed)?;
    out.push(CheckOutcome::new(
        "lemma1",
        "augmented state (s, z) is Markov",
        m.independent_at(0.01),
        format!("p = {:.3} on {} dof, {} bins", m.p_value, m.dof, m.bins_used),
    ));
    Ok(out)
}

fn random_table<R: Rng + ?Sized>(keys: impl Iterator<Item = StepKey>, rng: &mut R) -> BTreeMap<StepKey, f64> {
    keys.map(|k| (k, rng.random_range(-5.0..5.0))).collect()
}

pub fn trpo_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for observe in [true, false] {
        let (mdp, old, mut rng) = toy(observe, opts.seed)?;
        let cands: Vec<TabularPolicy> = (0..10).map(|_| TabularPolicy::for_mdp_random(&mdp, 2.0, &mut rng)).collect();
        let rho = mdp.visitation(&old)?;
        let table = random_table(rho.keys().cloned(), &mut rng);
        let r = trpo_term_constancy_check(&mdp, &old, &|k| table[k], &cands)?;
        let zero = trpo_term_constancy_check(&mdp, &old, &|_| 0.0, &cands)?;
        let total: f64 = rho.values().sum();
        let c = trpo_term_constancy_check(&mdp, &old, &|_| 2.5, &cands)?;
        let c_dev = c.terms.iter().map(|t| (t - 2.5 * total).abs()).fold(0.0, f64::max);
        let case = if observe { "case 1" } else { "case 2" };
        out.push(CheckOutcome::new(
            "trpo",
            format!("surrogate baseline term constant, {case}"),
            r.relative_deviation < 1e-10 && zero.max_abs_deviation == 0.0 && c_dev < 1e-10 * 2.5 * total,
            format!(
                "random b: relative deviation {:.2e}; b=0: {:.1e}; b=2.5: {:.2e} from 2.5*sum(rho)",
                r.relative_deviation, zero.max_abs_deviation, c_dev
            ),
        ));
    }
    let (mdp, mut old, _) = toy(false, opts.seed)?;
    old.logits[0] = f64::NEG_INFINITY;
    let mismatch = matches!(
        trpo_term_constancy_check(&mdp, &old, &|_| 1.0, std::slice::from_ref(&old)),
        Err(Error::SupportMismatch)
    );
    let detail = if mismatch {
        "zero-probability action in the old policy rejected"
    } else {
        "zero-probability action in the old policy not rejected"
    };
    out.push(CheckOutcome::new("trpo", "support mismatch detected", mismatch, detail));
    Ok(out)
}

pub fn optimality_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for observe in [true, false] {
        let (mdp, pol, _) = toy(observe, opts.seed)?;
        let r = baseline_optimality_check(&mdp, &pol, opts.perturbations, 1.0, opts.seed)?;
        let case = if observe { "case 1" } else { "case 2" };
        out.push(CheckOutcome::new(
            "optimality",
            format!("optimal baseline minimizes variance, {case}"),
            r.passed() && r.strict == r.trials,
            format!(
                "Var(b*) = {:.6}, min perturbed = {:.6}, {} of {} strictly larger, {} violations",
                r.variance_optimal, r.min_perturbed, r.strict, r.trials, r.violations
            ),
        ));
    }
    let (mdp, _, _) = toy(false, opts.seed)?;
    let uniform = TabularPolicy::for_mdp_uniform(&mdp);
    let mut worst: f64 = 0.0;
    for key in mdp.visitation(&uniform)?.keys() {
        let q = mdp.q_values(&uniform, key)?;
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        worst = worst.max((oracle_optimal_baseline(&mdp, &uniform, key)? - mean).abs());
    }
    out.push(CheckOutcome::new(
        "optimality",
        "uniform policy gives mean Q",
        worst < 1e-12,
        format!("max |b* - mean Q| = {worst:.2e}"),
    ));
    Ok(out)
}

/// Exact expected-gradient equality plus Monte Carlo bias of every baseline kind.
pub fn bias_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for observe in [true, false] {
        let (mdp, pol, mut rng) = toy(observe, opts.seed)?;
        let none = exact_gradient_moments(&mdp, &pol, &|_| 0.0)?;
        let state_b: Vec<f64> = (0..mdp.horizon * mdp.num_states).map(|_| rng.random_range(-5.0..5.0)).collect();
        let state = exact_gradient_moments(&mdp, &pol, &|k| state_b[k.t * mdp.num_states + k.state])?;
        let table = random_table(mdp.visitation(&pol)?.into_keys(), &mut rng);
        let input = exact_gradient_moments(&mdp, &pol, &|k| table[k])?;
        let oracle = exact_gradient_moments(&mdp, &pol, &|k| oracle_optimal_baseline(&mdp, &pol, k).unwrap_or(f64::NAN))?;
        let d = [&state, &input, &oracle]
            .iter()
            .map(|m| max_relative_difference(&none.mean, &m.mean))
            .fold(0.0, f64::max);
        let case = if observe { "case 1" } else { "case 2" };
        out.push(CheckOutcome::new(
            "bias",
            format!("exact expected gradient unchanged, {case}"),
            d < 1e-12,
            format!(
                "max relative difference {d:.2e}; trace variance none {:.3}, state {:.3}, input {:.3}, optimal {:.3}",
                none.trace_variance, state.trace_variance, input.trace_variance, oracle.trace_variance
            ),
        ));
    }

    for preset in ["gridworld", "motivating2"] {
        let env = EnvConfig::preset(preset)?;
        let kinds: &[BaselineKind] = if preset == "gridworld" {
            &[BaselineKind::State, BaselineKind::Multi, BaselineKind::Meta, BaselineKind::Oracle]
        } else {
            &[BaselineKind::State, BaselineKind::Multi]
        };
        let n_seq = 10;
        let inputs = training_inputs(&env, n_seq, opts.seed)?;
        let ids: Vec<u64> = inputs.iter().map(|i| i.id()).collect();
        let per_input = opts.bias_rollouts.div_ceil(n_seq).next_multiple_of(2);
        let mut rng = rng_from(opts.seed, &[stream::INIT, 77]);
        // linear policy keeps the number of tested coordinates small
        let policy = MlpParams::glorot(MlpConfig::new(vec![env.obs_dim(), env.num_actions()])?, &mut rng);
        for &kind in kinds {
            let cfg = BaselineConfig {
                kind,
                ..Default::default()
            };
            let model = BaselineModel::new(&cfg, env.obs_dim(), &ids, &mut rng)?;
            let r = bias_estimate(&policy, &env, &model, &inputs, per_input, 0.99, opts.seed)?;
            out.push(CheckOutcome::new(
                "bias",
                format!("{preset} {kind} baseline term within 3 SE of 0"),
                r.within(3.0),
                format!("max |mean|/SE = {:.2} over {} coordinates, {} rollouts", r.max_z_score(), r.mean.len(), r.rollouts),
            ));
        }
    }
    Ok(out)
}

pub fn gradcheck_suite(opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for preset in ["gridworld", "loadbalance10", "abr"] {
        let env = EnvConfig::preset(preset)?;
        let name = format!("{preset} policy 64/32");
        let cfg = MlpConfig::with_hidden(env.obs_dim(), &[64, 32], env.num_actions())?;
        let r = gradcheck(&cfg, opts.gradcheck_cases, opts.seed)?;
        out.push(CheckOutcome::new(
            "gradcheck",
            name,
            r.max_rel_error < 1e-4 && r.max_score_residual < 1e-9,
            format!(
                "max relative error {:.2e}, max |sum_a pi grad log pi| {:.2e} over {} cases",
                r.max_rel_error, r.max_score_residual, r.cases
            ),
        ));
    }
    out.push(determinism_check(opts.seed)?);
    Ok(out)
}

/// Two short identical training runs must produce bit-identical metrics and parameters.
pub fn determinism_check(seed: u64) -> Result<CheckOutcome> {
    let env = EnvConfig::preset("motivating2")?;
    let mut cfg = TrainConfig {
        seed,
        num_workers: 8,
        policy_hidden: vec![16],
        ..Default::default()
    };
    cfg.baseline.hidden = vec![16];
    cfg.baseline.k = 4;
    let mut all_same = true;
    for kind in [BaselineKind::State, BaselineKind::Multi, BaselineKind::Meta] {
        cfg.baseline.kind = kind;
        let run = || -> Result<(Vec<String>, Vec<f64>)> {
            let mut st = TrainState::new(&cfg, &env)?;
            let mut lines = Vec::new();
            for _ in 0..3 {
                lines.push(serde_json::to_string(&st.step(&cfg, &env)?)?);
            }
            Ok((lines, st.policy.flat().to_vec()))
        };
        let (a, pa) = run()?;
        let (b, pb) = run()?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        all_same &= a == b && bits(&pa) == bits(&pb);
    }
    Ok(CheckOutcome::new(
        "gradcheck",
        "bitwise reproducible training",
        all_same,
        "state, multi and meta runs repeated with the same seed",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SuiteOptions {
        SuiteOptions {
            gap_trajectories: 50_000,
            bias_rollouts: 200,
            gradcheck_cases: 3,
            perturbations: 10,
            ..Default::default()
        }
    }

    #[test]
    fn quick_suites_pass() {
        for s in ["gridworld", "lemma1", "trpo", "optimality", "gradcheck"] {
            for o in run_suite(s, &quick()).unwrap() {
                assert!(o.passed, "{o:?}");
            }
        }
    }

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(run_suite("mujoco", &quick()).is_err());
    }
}
