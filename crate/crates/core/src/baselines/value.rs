//! Squared-error value regression shared by every trainable baseline.

use crate::imdp::{discounted_returns, Trajectory};
use crate::nn::{AdamState, MlpParams};
use crate::{Error, Result};

/// Critic input: the observation followed by the normalized step index `t / horizon`.
///
/// With a fixed-length input sequence the step index is a function of the
/// remaining input tail, so appending it keeps every baseline a function of
/// `(ω_t, z_{t:∞})`.
pub fn critic_features(observation: &[f64], t: usize, horizon: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(observation.len() + 1);
    v.extend_from_slice(observation);
    v.push(t as f64 / horizon.max(1) as f64);
    v
}

/// Flattened `(features, discounted return)` pairs for a set of rollouts.
#[derive(Debug, Clone, Default)]
pub struct ValueBatch {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl ValueBatch {
    pub fn from_trajectories<'a, I>(trajectories: I, gamma: f64, horizon: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Trajectory>,
    {
        let mut batch = ValueBatch::default();
        for traj in trajectories {
            let returns = discounted_returns(&traj.rewards(), gamma)?;
            for (tr, g) in traj.transitions.iter().zip(returns) {
                batch.features.push(critic_features(&tr.observation.values, tr.t, horizon));
                batch.targets.push(g);
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `Σ ‖V(ω_t) − G_t‖²` over the batch.
pub fn value_loss(params: &MlpParams, batch: &ValueBatch) -> Result<f64> {
    let mut loss = 0.0;
    for (x, g) in batch.features.iter().zip(&batch.targets) {
        let v = params.predict(x)?[0];
        loss += (v - g) * (v - g);
    }
    Ok(loss)
}

/// Summed loss and its gradient.
pub fn value_loss_grad(params: &MlpParams, batch: &ValueBatch) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (x, g) in batch.features.iter().zip(&batch.targets) {
        let (out, cache) = params.forward(x)?;
        let err = out[0] - g;
        loss += err * err;
        params.backward_accumulate(&cache, &[2.0 * err], &mut grad)?;
    }
    Ok((loss, grad))
}

pub fn mean_value_loss(params: &MlpParams, batch: &ValueBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty value batch"));
    }
    Ok(value_loss(params, batch)? / batch.len() as f64)
}

/// Predicted baseline for every step of `traj`.
pub fn predict_values(params: &MlpParams, traj: &Trajectory, horizon: usize) -> Result<Vec<f64>> {
    traj.transitions
        .iter()
        .map(|tr| Ok(params.predict(&critic_features(&tr.observation.values, tr.t, horizon))?[0]))
        .collect()
}

/// One optimizer step on the mean value loss over all transitions of `trajectories`.
/// Returns the mean loss before the step.
pub fn state_value_fit(
    params: &mut MlpParams,
    trajectories: &[Trajectory],
    gamma: f64,
    horizon: usize,
    optimizer: &mut AdamState,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::invalid("state_value_fit needs at least one trajectory"));
    }
    let batch = ValueBatch::from_trajectories(trajectories, gamma, horizon)?;
    fit_batch(params, &batch, optimizer)
}

pub(crate) fn fit_batch(params: &mut MlpParams, batch: &ValueBatch, optimizer: &mut AdamState) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty value batch"));
    }
    let (loss, mut grad) = value_loss_grad(params, batch)?;
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    optimizer.step(params, &grad)?;
    Ok(loss / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imdp::{Observation, Transition};
    use crate::nn::MlpConfig;
    use crate::rng::rng_from;
    use approx::assert_relative_eq;

    fn constant_traj(len: usize, reward: f64) -> Trajectory {
        Trajectory {
            transitions: (0..len)
                .map(|t| Transition {
                    t,
                    observation: Observation::new(vec![0.0], false),
                    action: 0,
                    log_prob: 0.0,
                    reward,
                    done: t + 1 == len,
                })
                .collect(),
            input_seq_id: 0,
            total_steps: len,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from(1, &[]);
        let params = MlpParams::glorot(MlpConfig::new(vec![2, 6, 1]).unwrap(), &mut rng);
        let mut traj = constant_traj(7, 0.3);
        for (i, tr) in traj.transitions.iter_mut().enumerate() {
            tr.observation.values[0] = (i as f64 * 0.37).sin() + 0.3;
            tr.reward = (i as f64).cos();
        }
        let batch = ValueBatch::from_trajectories([&traj], 0.9, 7).unwrap();
        let (_, g) = value_loss_grad(&params, &batch).unwrap();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p.flat_mut()[i] += h;
            let up = value_loss(&p, &batch).unwrap();
            p.flat_mut()[i] -= 2.0 * h;
            let down = value_loss(&p, &batch).unwrap();
            assert_relative_eq!(g[i], (up - down) / (2.0 * h), epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn constant_reward_converges_to_geometric_value() {
        // one state, effectively endless: target r / (1 − γ) away from the tail
        let gamma = 0.9;
        let traj = constant_traj(400, 1.0);
        let mut rng = rng_from(2, &[]);
        let mut params = MlpParams::glorot(MlpConfig::new(vec![2, 16, 1]).unwrap(), &mut rng);
        let mut opt = AdamState::new(params.len(), 0.01);
        // fit on the early part of the episode where the return is ≈ 10
        let mut head = traj.clone();
        let returns = discounted_returns(&traj.rewards(), gamma).unwrap();
        head.transitions.truncate(200);
        for tr in head.transitions.iter_mut() {
            tr.observation.values[0] = 1.0;
        }
        let mut batch = ValueBatch::from_trajectories([&head], gamma, 400).unwrap();
        batch.targets = returns[..200].to_vec();
        for _ in 0..3000 {
            fit_batch(&mut params, &batch, &mut opt).unwrap();
        }
        let v = params.predict(&critic_features(&[1.0], 10, 400)).unwrap()[0];
        assert_relative_eq!(v, 1.0 / (1.0 - gamma), max_relative = 0.01);
    }

    #[test]
    fn zero_rewards_drive_predictions_to_zero() {
        let traj = constant_traj(50, 0.0);
        let mut rng = rng_from(3, &[]);
        let mut params = MlpParams::glorot(MlpConfig::new(vec![2, 8, 1]).unwrap(), &mut rng);
        params.flat_mut().iter_mut().for_each(|p| *p += 0.5);
        let mut opt = AdamState::new(params.len(), 0.01);
        let first = state_value_fit(&mut params, std::slice::from_ref(&traj), 0.99, 50, &mut opt).unwrap();
        let mut last = first;
        for _ in 0..500 {
            last = state_value_fit(&mut params, std::slice::from_ref(&traj), 0.99, 50, &mut opt).unwrap();
        }
        assert!(last < 1e-3 * first.max(1e-3), "loss {first} -> {last}");
    }

    #[test]
    fn one_small_step_reduces_loss() {
        let mut traj = constant_traj(20, 1.0);
        for (i, tr) in traj.transitions.iter_mut().enumerate() {
            tr.reward = if i % 3 == 0 { 2.0 } else { -0.5 };
        }
        let mut rng = rng_from(4, &[]);
        let mut params = MlpParams::glorot(MlpConfig::new(vec![2, 8, 8, 1]).unwrap(), &mut rng);
        let batch = ValueBatch::from_trajectories([&traj], 0.95, 20).unwrap();
        let before = value_loss(&params, &batch).unwrap();
        let mut opt = AdamState::new(params.len(), 1e-4);
        state_value_fit(&mut params, &[traj], 0.95, 20, &mut opt).unwrap();
        assert!(value_loss(&params, &batch).unwrap() < before);
    }

    #[test]
    fn empty_input_is_an_error() {
        let mut params = MlpParams::zeros(MlpConfig::new(vec![2, 1]).unwrap());
        let mut opt = AdamState::new(params.len(), 0.1);
        assert!(state_value_fit(&mut params, &[], 0.9, 1, &mut opt).is_err());
    }
}
