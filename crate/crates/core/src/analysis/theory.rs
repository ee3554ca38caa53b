//! Exact and sampled checks of the baseline results on enumerable MDPs.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::enumerable::{EnumerableMdp, Path, StepKey, TabularPolicy};
use crate::baselines::oracle_table;
use crate::rng::{rng_from, stream};
use crate::stats::{chi_square_independence, chi_square_sf};
use crate::{Error, Result};

/// Minimum samples per conditioning bin for the sampled tests.
pub const MIN_BIN_SAMPLES: usize = 100;
const SHARD: usize = 8192;

/// Exact mean and trace of covariance of an estimator over enumerated paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMoments {
    pub mean: Vec<f64>,
    pub trace_variance: f64,
}

/// Moments of the whole-episode estimator `Σ_t ∇log π(a_t|ω_t) (G_t − b(key_t))`.
pub fn exact_gradient_moments(
    mdp: &EnumerableMdp,
    policy: &TabularPolicy,
    baseline: &dyn Fn(&StepKey) -> f64,
) -> Result<GradientMoments> {
    let paths = mdp.enumerate_paths(policy)?;
    let mut mean = vec![0.0; policy.num_params()];
    let mut second = 0.0;
    let mut g = vec![0.0; policy.num_params()];
    for path in &paths {
        g.iter_mut().for_each(|x| *x = 0.0);
        let returns = mdp.returns(path);
        for t in 0..mdp.horizon {
            let obs = mdp.observation(path.states[t], path.inputs[t]);
            policy.add_score(obs, path.actions[t], returns[t] - baseline(&path.key(t)), &mut g);
        }
        for (m, x) in mean.iter_mut().zip(&g) {
            *m += path.prob * x;
        }
        second += path.prob * g.iter().map(|x| x * x).sum::<f64>();
    }
    let norm_sq: f64 = mean.iter().map(|m| m * m).sum();
    Ok(GradientMoments {
        mean,
        trace_variance: second - norm_sq,
    })
}

/// `E[Σ_t ∇log π(a_t|ω_t) b(key_t)]` by enumeration.
pub fn exact_bias_term(mdp: &EnumerableMdp, policy: &TabularPolicy, baseline: &dyn Fn(&StepKey) -> f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; policy.num_params()];
    for path in mdp.enumerate_paths(policy)? {
        for t in 0..mdp.horizon {
            let obs = mdp.observation(path.states[t], path.inputs[t]);
            policy.add_score(obs, path.actions[t], path.prob * baseline(&path.key(t)), &mut out);
        }
    }
    Ok(out)
}

/// Largest coordinate difference relative to the largest coordinate of `reference`.
pub fn max_relative_difference(reference: &[f64], other: &[f64]) -> f64 {
    let scale = reference.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let diff = reference
        .iter()
        .zip(other)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Trace of the covariance of the single-step estimator
/// `∇log π(a|ω) (Q(ω, a, z) − b(ω, z))` with `(ω, z)` drawn from the normalized
/// step visitation and `a ∼ π`.
pub fn step_variance(mdp: &EnumerableMdp, policy: &TabularPolicy, baseline: &dyn Fn(&StepKey) -> f64) -> Result<f64> {
    let rho = mdp.visitation(policy)?;
    let total: f64 = rho.values().sum();
    let mut mean = vec![0.0; policy.num_params()];
    let mut second = 0.0;
    for (key, w) in &rho {
        let w = w / total;
        let obs = mdp.key_observation(key);
        let q = mdp.q_values(policy, key)?;
        let probs = policy.probs(obs);
        let b = baseline(key);
        for (a, &pa) in probs.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            let c = q[a] - b;
            second += w * pa * policy.score_norm_sq(obs, a) * c * c;
            policy.add_score(obs, a, w * pa * c, &mut mean);
        }
    }
    Ok(second - mean.iter().map(|m| m * m).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub variance_optimal: f64,
    pub min_perturbed: f64,
    pub trials: usize,
    /// Trials where the perturbed variance fell below the optimum beyond rounding.
    pub violations: usize,
    /// Trials where the perturbed variance was strictly larger.
    pub strict: usize,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Compares the step variance under the enumerated optimal baseline against
/// `perturbations` random Gaussian perturbations of it.
pub fn baseline_optimality_check(
    mdp: &EnumerableMdp,
    policy: &TabularPolicy,
    perturbations: usize,
    scale: f64,
    seed: u64,
) -> Result<OptimalityReport> {
    let table = oracle_table(mdp, policy)?;
    let lookup = |t: &BTreeMap<StepKey, f64>, k: &StepKey| t.get(k).copied().unwrap_or(0.0);
    let v_opt = step_variance(mdp, policy, &|k| lookup(&table, k))?;
    let tol = 1e-12 * v_opt.abs().max(1.0);
    let mut rng = rng_from(seed, &[stream::ANALYSIS]);
    let normal = rand_distr::Normal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?;
    let mut report = OptimalityReport {
        variance_optimal: v_opt,
        min_perturbed: f64::INFINITY,
        trials: perturbations,
        violations: 0,
        strict: 0,
    };
    for _ in 0..perturbations {
        let shifted: BTreeMap<StepKey, f64> = table.iter().map(|(k, b)| (k.clone(), b + rng.sample(normal))).collect();
        let v = step_variance(mdp, policy, &|k| lookup(&shifted, k))?;
        report.min_perturbed = report.min_perturbed.min(v);
        if v < v_opt - tol {
            report.violations += 1;
        }
        if v > v_opt + tol {
            report.strict += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrpoReport {
    /// `Σ_{(ω,z)} ρ_old Σ_a π_old (π_θ / π_old) b` for every candidate θ.
    pub terms: Vec<f64>,
    /// `Σ ρ_old b`, the value every term should equal.
    pub reference: f64,
    pub max_abs_deviation: f64,
    pub relative_deviation: f64,
}

/// Enumerates the importance-weighted baseline term of the surrogate objective for
/// each candidate policy.
pub fn trpo_term_constancy_check(
    mdp: &EnumerableMdp,
    old: &TabularPolicy,
    baseline: &dyn Fn(&StepKey) -> f64,
    candidates: &[TabularPolicy],
) -> Result<TrpoReport> {
    let rho = mdp.visitation(old)?;
    for key in rho.keys() {
        if old.probs(mdp.key_observation(key)).contains(&0.0) {
            return Err(Error::SupportMismatch);
        }
    }
    let reference: f64 = rho.iter().map(|(k, w)| w * baseline(k)).sum();
    let mut terms = Vec::with_capacity(candidates.len());
    for theta in candidates {
        if theta.logits.len() != old.logits.len() {
            return Err(Error::DimensionMismatch {
                context: "candidate policy",
                expected: old.logits.len(),
                got: theta.logits.len(),
            });
        }
        let mut term = 0.0;
        for (key, w) in &rho {
            let obs = mdp.key_observation(key);
            let b = baseline(key);
            let p_old = old.probs(obs);
            let p_new = theta.probs(obs);
            term += w * p_old.iter().zip(&p_new).map(|(po, pn)| po * (pn / po) * b).sum::<f64>();
        }
        terms.push(term);
    }
    let max_abs_deviation = terms.iter().map(|t| (t - reference).abs()).fold(0.0, f64::max);
    let scale = terms.iter().chain(std::iter::once(&reference)).map(|t| t.abs()).fold(0.0, f64::max);
    Ok(TrpoReport {
        terms,
        reference,
        max_abs_deviation,
        relative_deviation: if scale > 0.0 { max_abs_deviation / scale } else { 0.0 },
    })
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// One sampled episode.
pub fn simulate_path<R: Rng + ?Sized>(mdp: &EnumerableMdp, policy: &TabularPolicy, rng: &mut R) -> Path {
    let mut s = sample_index(&mdp.initial_state, rng);
    let mut z = sample_index(&mdp.initial_input, rng);
    let mut path = Path {
        prob: 1.0,
        states: Vec::with_capacity(mdp.horizon),
        inputs: Vec::with_capacity(mdp.horizon),
        actions: Vec::with_capacity(mdp.horizon),
    };
    for _ in 0..mdp.horizon {
        let a = sample_index(&policy.probs(mdp.observation(s, z)), rng);
        path.states.push(s);
        path.inputs.push(z);
        path.actions.push(a);
        let s2 = sample_index(&mdp.state_kernel[s][a][z], rng);
        z = sample_index(&mdp.input_kernel[z][a], rng);
        s = s2;
    }
    path
}

/// `n` sampled episodes, generated in fixed-size shards with their own seeds.
pub fn simulate_paths(mdp: &EnumerableMdp, policy: &TabularPolicy, n: usize, seed: u64) -> Vec<Path> {
    let shards = n.div_ceil(SHARD);
    (0..shards)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = rng_from(seed, &[stream::ANALYSIS, i as u64]);
            let count = SHARD.min(n - i * SHARD);
            (0..count).map(|_| simulate_path(mdp, policy, &mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Independence test summary over several conditioning bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    /// Largest total-variation distance between a bin's joint and the product of its marginals.
    pub max_tv: f64,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins_used: usize,
    /// Bins skipped for having fewer than [`MIN_BIN_SAMPLES`] samples.
    pub bins_excluded: usize,
    pub samples: usize,
}

impl IndependenceReport {
    pub fn independent_at(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

fn tail_index(tail: &[usize], base: usize) -> usize {
    tail.iter().fold(0, |acc, z| acc * base + z)
}

fn table_tv(table: &[Vec<f64>]) -> f64 {
    let total: f64 = table.iter().flatten().sum();
    if total == 0.0 {
        return 0.0;
    }
    let ncols = table.first().map_or(0, Vec::len);
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / total).collect();
    let cols: Vec<f64> = (0..ncols).map(|j| table.iter().map(|r| r[j]).sum::<f64>() / total).collect();
    let mut tv = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, x) in r.iter().enumerate() {
            tv += (x / total - rows[i] * cols[j]).abs();
        }
    }
    0.5 * tv
}

fn summarize(bins: &BTreeMap<usize, Vec<Vec<f64>>>, samples: usize, exact: bool) -> IndependenceReport {
    let mut rep = IndependenceReport {
        max_tv: 0.0,
        chi_square: 0.0,
        dof: 0,
        p_value: 1.0,
        bins_used: 0,
        bins_excluded: 0,
        samples,
    };
    for table in bins.values() {
        let n: f64 = table.iter().flatten().sum();
        if !exact && (n as usize) < MIN_BIN_SAMPLES {
            rep.bins_excluded += 1;
            continue;
        }
        rep.bins_used += 1;
        rep.max_tv = rep.max_tv.max(table_tv(table));
        if !exact {
            let (stat, dof, _) = chi_square_independence(table);
            rep.chi_square += stat;
            rep.dof += dof;
        }
    }
    if !exact {
        rep.p_value = chi_square_sf(rep.chi_square, rep.dof);
    }
    rep
}

fn lemma1_tables(mdp: &EnumerableMdp, paths: &[Path], t: usize, weighted: bool) -> BTreeMap<usize, Vec<Vec<f64>>> {
    let cols = mdp.num_inputs.pow((mdp.horizon - t) as u32);
    let mut bins: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for p in paths {
        let obs = mdp.observation(p.states[t], p.inputs[t]);
        let table = bins
            .entry(obs)
            .or_insert_with(|| vec![vec![0.0; cols]; mdp.num_actions]);
        table[p.actions[t]][tail_index(&p.inputs[t..], mdp.num_inputs)] += if weighted { p.prob } else { 1.0 };
    }
    bins
}

/// Exact check that `(a_t, z_{t..T})` factorizes given `ω_t`.
pub fn lemma1_exact(mdp: &EnumerableMdp, policy: &TabularPolicy, t: usize) -> Result<IndependenceReport> {
    if t >= mdp.horizon {
        return Err(Error::invalid("step index beyond the horizon"));
    }
    let paths = mdp.enumerate_paths(policy)?;
    let n = paths.len();
    Ok(summarize(&lemma1_tables(mdp, &paths, t, true), n, true))
}

/// Sampled version: per-observation chi-square tests of independence between
/// `a_t` and the input tail, pooled over observations.
pub fn lemma1_factorization_check(
    mdp: &EnumerableMdp,
    policy: &TabularPolicy,
    t: usize,
    num_samples: usize,
    seed: u64,
) -> Result<IndependenceReport> {
    if t >= mdp.horizon {
        return Err(Error::invalid("step index beyond the horizon"));
    }
    let paths = simulate_paths(mdp, policy, num_samples, seed);
    Ok(summarize(&lemma1_tables(mdp, &paths, t, false), num_samples, false))
}

/// Tests whether the next `(s, z)` (or `s` alone when `augmented` is false)
/// depends on `(s_{t−1}, a_{t−1})` once `(s_t, z_t, a_t)` (or `(s_t, a_t)`) is known.
pub fn markov_property_check(
    mdp: &EnumerableMdp,
    policy: &TabularPolicy,
    num_samples: usize,
    augmented: bool,
    seed: u64,
) -> Result<IndependenceReport> {
    if mdp.horizon < 3 {
        return Err(Error::invalid("the Markov check needs a horizon of at least 3"));
    }
    let (ns, na, nz) = (mdp.num_states, mdp.num_actions, mdp.num_inputs);
    let cols = if augmented { ns * nz } else { ns };
    let mut bins: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for p in simulate_paths(mdp, policy, num_samples, seed) {
        for t in 1..mdp.horizon - 1 {
            let bin = if augmented {
                (p.states[t] * nz + p.inputs[t]) * na + p.actions[t]
            } else {
                p.states[t] * na + p.actions[t]
            };
            let row = p.states[t - 1] * na + p.actions[t - 1];
            let col = if augmented {
                p.states[t + 1] * nz + p.inputs[t + 1]
            } else {
                p.states[t + 1]
            };
            bins.entry(bin).or_insert_with(|| vec![vec![0.0; cols]; ns * na])[row][col] += 1.0;
        }
    }
    Ok(summarize(&bins, num_samples, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::oracle_optimal_baseline;

    fn setup(observe_input: bool, seed: u64) -> (EnumerableMdp, TabularPolicy) {
        let mut rng = rng_from(seed, &[]);
        let mdp = EnumerableMdp::toy(4, observe_input, &mut rng).unwrap();
        let pol = TabularPolicy::for_mdp_random(&mdp, 1.0, &mut rng);
        (mdp, pol)
    }

    #[test]
    fn expected_gradient_is_baseline_invariant() {
        for observe in [false, true] {
            let (mdp, pol) = setup(observe, 1);
            let none = exact_gradient_moments(&mdp, &pol, &|_| 0.0).unwrap();
            let state = exact_gradient_moments(&mdp, &pol, &|k| (k.t as f64) - 2.0 * k.state as f64).unwrap();
            let input = exact_gradient_moments(&mdp, &pol, &|k| {
                k.input_tail.iter().enumerate().map(|(i, z)| (i + 1) as f64 * *z as f64).sum::<f64>() + k.state as f64
            })
            .unwrap();
            assert!(max_relative_difference(&none.mean, &state.mean) < 1e-12);
            assert!(max_relative_difference(&none.mean, &input.mean) < 1e-12);
        }
    }

    #[test]
    fn oracle_bias_term_vanishes() {
        let (mdp, pol) = setup(false, 2);
        let b = |k: &StepKey| oracle_optimal_baseline(&mdp, &pol, k).unwrap();
        let term = exact_bias_term(&mdp, &pol, &b).unwrap();
        assert!(term.iter().all(|x| x.abs() < 1e-13), "{term:?}");
    }

    #[test]
    fn zero_perturbation_is_equality_and_random_ones_are_worse() {
        let (mdp, pol) = setup(true, 3);
        let r = baseline_optimality_check(&mdp, &pol, 0, 1.0, 0).unwrap();
        assert!(r.passed());
        let r = baseline_optimality_check(&mdp, &pol, 100, 0.5, 7).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.strict, 100);
        assert!(r.min_perturbed > r.variance_optimal);
    }

    #[test]
    fn trpo_term_is_constant() {
        let (mdp, old) = setup(false, 4);
        let mut rng = rng_from(44, &[]);
        let cands: Vec<_> = (0..10).map(|_| TabularPolicy::for_mdp_random(&mdp, 2.0, &mut rng)).collect();
        let zero = trpo_term_constancy_check(&mdp, &old, &|_| 0.0, &cands).unwrap();
        assert!(zero.terms.iter().all(|t| *t == 0.0));
        let c = trpo_term_constancy_check(&mdp, &old, &|_| 1.5, &cands).unwrap();
        let rho_total: f64 = mdp.visitation(&old).unwrap().values().sum();
        for t in &c.terms {
            assert!((t - 1.5 * rho_total).abs() < 1e-12);
        }
        let table: BTreeMap<StepKey, f64> = mdp
            .visitation(&old)
            .unwrap()
            .into_keys()
            .map(|k| (k, rng.random_range(-3.0..3.0)))
            .collect();
        let r = trpo_term_constancy_check(&mdp, &old, &|k| table[k], &cands).unwrap();
        assert!(r.relative_deviation < 1e-10, "{r:?}");
    }

    #[test]
    fn trpo_support_mismatch() {
        let (mdp, mut old) = setup(false, 5);
        old.logits[0] = -1e6;
        assert!(matches!(
            trpo_term_constancy_check(&mdp, &old, &|_| 1.0, &[old.clone()]),
            Err(Error::SupportMismatch)
        ));
    }

    #[test]
    fn lemma1_exact_holds_and_leak_breaks_it() {
        let (mdp, pol) = setup(false, 6);
        for t in 0..mdp.horizon {
            assert!(lemma1_exact(&mdp, &pol, t).unwrap().max_tv < 1e-12);
        }
        let leaky = mdp.with_action_leak(0.9).unwrap();
        assert!(lemma1_exact(&leaky, &pol, 1).unwrap().max_tv > 0.05);
    }

    #[test]
    fn lemma1_sampled_uniform_policy_passes_and_leak_fails() {
        let (mdp, _) = setup(true, 7);
        let pol = TabularPolicy::for_mdp_uniform(&mdp);
        let ok = lemma1_factorization_check(&mdp, &pol, 1, 40_000, 1).unwrap();
        assert!(ok.independent_at(0.01), "{ok:?}");
        let leaky = mdp.with_action_leak(0.9).unwrap();
        let bad = lemma1_factorization_check(&leaky, &pol, 1, 40_000, 1).unwrap();
        assert!(!bad.independent_at(0.01), "{bad:?}");
    }

    #[test]
    fn augmented_state_is_markov_but_projection_is_not() {
        let mut rng = rng_from(8, &[]);
        let mut mdp = EnumerableMdp::random(2, 2, 2, 6, 0.9, true, &mut rng).unwrap();
        // sticky inputs that strongly drive the state
        for per_action in &mut mdp.input_kernel {
            for (z, row) in per_action.iter_mut().enumerate() {
                *row = if z == 0 { vec![0.95, 0.05] } else { vec![0.05, 0.95] };
            }
        }
        for s in 0..2 {
            for a in 0..2 {
                mdp.state_kernel[s][a] = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
            }
        }
        let pol = TabularPolicy::for_mdp_uniform(&mdp);
        let aug = markov_property_check(&mdp, &pol, 100_000, true, 3).unwrap();
        assert!(aug.independent_at(0.01), "{aug:?}");
        let proj = markov_property_check(&mdp, &pol, 100_000, false, 3).unwrap();
        assert!(!proj.independent_at(0.01), "{proj:?}");
    }
}
