//! Variance-optimal input-dependent baseline, computed exactly on enumerable MDPs.

use std::collections::BTreeMap;

use crate::analysis::enumerable::{EnumerableMdp, StepKey, TabularPolicy};
use crate::imdp::{discounted_returns, InputSequence, Trajectory};
use crate::nn::{softmax, MlpParams};
use crate::{Error, Result};

/// Upper bound on `(observation, action, input tail)` combinations.
pub const ORACLE_LIMIT: usize = 4096;

/// `Σ_a π_a w_a Q_a / Σ_a π_a w_a` with `w_a = ‖∇log π(a)‖²`, or `Σ_a π_a Q_a`
/// when every weight vanishes.
pub fn optimal_baseline_from_q(probs: &[f64], score_norms: &[f64], q: &[f64]) -> f64 {
    let den: f64 = probs.iter().zip(score_norms).map(|(p, w)| p * w).sum();
    if den > 0.0 {
        probs
            .iter()
            .zip(score_norms)
            .zip(q)
            .map(|((p, w), q)| p * w * q)
            .sum::<f64>()
            / den
    } else {
        probs.iter().zip(q).map(|(p, q)| p * q).sum()
    }
}

fn combination_count(mdp: &EnumerableMdp) -> usize {
    let tails: usize = (1..=mdp.horizon)
        .map(|l| mdp.num_inputs.saturating_pow(l as u32))
        .fold(0usize, |a, b| a.saturating_add(b));
    mdp.num_observations()
        .saturating_mul(mdp.num_actions)
        .saturating_mul(tails)
}

fn check_bound(mdp: &EnumerableMdp) -> Result<()> {
    let count = combination_count(mdp);
    if count > ORACLE_LIMIT {
        return Err(Error::EnumerationBound {
            count: count as u64,
            limit: ORACLE_LIMIT as u64,
        });
    }
    Ok(())
}

/// Optimal baseline at `(ω_t, z_{t..T})` for the given tabular policy.
pub fn oracle_optimal_baseline(mdp: &EnumerableMdp, policy: &TabularPolicy, key: &StepKey) -> Result<f64> {
    check_bound(mdp)?;
    let q = mdp.q_values(policy, key)?;
    let obs = mdp.key_observation(key);
    let probs = policy.probs(obs);
    let norms: Vec<f64> = (0..mdp.num_actions).map(|a| policy.score_norm_sq(obs, a)).collect();
    Ok(optimal_baseline_from_q(&probs, &norms, &q))
}

/// The optimal baseline for every reachable step key.
pub fn oracle_table(mdp: &EnumerableMdp, policy: &TabularPolicy) -> Result<BTreeMap<StepKey, f64>> {
    check_bound(mdp)?;
    mdp.visitation(policy)?
        .into_keys()
        .map(|k| {
            let b = oracle_optimal_baseline(mdp, policy, &k)?;
            Ok((k, b))
        })
        .collect()
}

/// Input-dependent baseline for the grid walker:
/// `b_t = E_π[a_t | ω_t] + Σ_{l≥0} γ^l z_{t+l}` over the rest of the episode.
///
/// At the uniform policy this equals `E_a[Q(ω_t, a, z_{t:})]`.
pub fn gridworld_oracle_values(
    policy: &MlpParams,
    traj: &Trajectory,
    input: &InputSequence,
    gamma: f64,
) -> Result<Vec<f64>> {
    if input.id() != traj.input_seq_id {
        return Err(Error::invalid("trajectory was not generated from this input sequence"));
    }
    let n = traj.len();
    let mut z = Vec::with_capacity(n);
    for t in 0..n {
        z.push(input.require(t, t)?[0]);
    }
    let tail = discounted_returns(&z, gamma)?;
    traj.transitions
        .iter()
        .zip(tail)
        .map(|(tr, zt)| {
            let p = softmax(&policy.predict(&tr.observation.values)?);
            if p.len() != 2 {
                return Err(Error::invalid("grid walker policy must have two actions"));
            }
            Ok(p[1] - p[0] + zt)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use approx::assert_relative_eq;

    #[test]
    fn equal_weights_give_mean_q() {
        let b = optimal_baseline_from_q(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 3.0]);
        assert_relative_eq!(b, 2.0);
    }

    #[test]
    fn single_action_falls_back_to_mean_q() {
        let b = optimal_baseline_from_q(&[1.0], &[0.0], &[4.5]);
        assert_relative_eq!(b, 4.5);
    }

    #[test]
    fn grid_search_agrees_on_two_state_toy() {
        let mut rng = rng_from(11, &[]);
        let mdp = EnumerableMdp::random(2, 2, 2, 2, 0.9, false, &mut rng).unwrap();
        let pol = TabularPolicy::for_mdp_random(&mdp, 1.5, &mut rng);
        for key in mdp.visitation(&pol).unwrap().keys() {
            let b = oracle_optimal_baseline(&mdp, &pol, key).unwrap();
            let obs = mdp.key_observation(key);
            let q = mdp.q_values(&pol, key).unwrap();
            let p = pol.probs(obs);
            let var = |b: f64| -> f64 { (0..2).map(|a| p[a] * pol.score_norm_sq(obs, a) * (q[a] - b).powi(2)).sum() };
            let step = 1e-4;
            let best = (-40_000..=40_000)
                .map(|i| i as f64 * step)
                .min_by(|x, y| var(*x).total_cmp(&var(*y)))
                .unwrap();
            assert!((best - b).abs() <= step, "{best} vs {b}");
        }
    }

    #[test]
    fn uniform_policy_gives_mean_q() {
        let mut rng = rng_from(12, &[]);
        let mdp = EnumerableMdp::toy(3, true, &mut rng).unwrap();
        let pol = TabularPolicy::for_mdp_uniform(&mdp);
        for key in mdp.visitation(&pol).unwrap().keys() {
            let q = mdp.q_values(&pol, key).unwrap();
            let b = oracle_optimal_baseline(&mdp, &pol, key).unwrap();
            assert_relative_eq!(b, q.iter().sum::<f64>() / q.len() as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_input_makes_oracle_a_function_of_state() {
        let mut rng = rng_from(13, &[]);
        let mut mdp = EnumerableMdp::toy(3, false, &mut rng).unwrap();
        mdp.initial_input = vec![1.0, 0.0];
        for per_action in &mut mdp.input_kernel {
            for row in per_action {
                *row = vec![1.0, 0.0];
            }
        }
        let pol = TabularPolicy::for_mdp_random(&mdp, 1.0, &mut rng);
        let table = oracle_table(&mdp, &pol).unwrap();
        let mut by_state: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (k, b) in table {
            let prev = by_state.insert((k.t, k.state), b);
            assert!(prev.is_none(), "one tail per (t, s) under a constant input");
        }
    }

    #[test]
    fn gridworld_oracle_at_uniform_policy_is_discounted_input_tail() {
        use crate::envs::gridworld::{GridWorldConfig, GridWorldEnv};
        use crate::imdp::rollout;
        use crate::nn::MlpConfig;
        let mut env = GridWorldEnv::new(GridWorldConfig { horizon: 4, ..Default::default() }).unwrap();
        let policy = MlpParams::zeros(MlpConfig::new(vec![1, 2]).unwrap());
        let input = InputSequence::from_scalars(0, vec![1.0, -1.0, 1.0, 1.0]).unwrap();
        let traj = rollout(&policy, &mut env, &input, 4, 0).unwrap();
        let b = gridworld_oracle_values(&policy, &traj, &input, 0.5).unwrap();
        let expect = [1.0 - 0.5 + 0.25 + 0.125, -1.0 + 0.5 + 0.25, 1.0 + 0.5, 1.0];
        for (x, y) in b.iter().zip(expect) {
            assert_relative_eq!(*x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn bound_is_enforced() {
        let mut rng = rng_from(14, &[]);
        let mdp = EnumerableMdp::random(4, 4, 4, 6, 0.9, true, &mut rng).unwrap();
        let pol = TabularPolicy::for_mdp_uniform(&mdp);
        let key = StepKey { t: 5, state: 0, input_tail: vec![0] };
        assert!(matches!(oracle_optimal_baseline(&mdp, &pol, &key), Err(Error::EnumerationBound { .. })));
    }
}
