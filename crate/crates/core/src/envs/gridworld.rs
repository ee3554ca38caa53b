//! 1D grid walker: `s_{t+1} = s_t + a_t + z_t`, reward `a_t + z_t`, with
//! `a_t, z_t ∈ {−1, +1}`.

use std::any::Any;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imdp::{InputDrivenEnv, InputSequence, Observation, StepOutcome};
use crate::rng::{self, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridWorldState {
    pub position: i64,
    /// Scalar parameter of the closed-form policy `π(+1) = σ(θ)`; unused by the dynamics.
    pub theta: f64,
}

fn check_unit(v: i64, what: &str) -> Result<()> {
    if v == 1 || v == -1 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be ±1, got {v}")))
    }
}

pub fn gridworld_step(state: GridWorldState, action: i64, input: i64) -> Result<(GridWorldState, f64)> {
    check_unit(action, "action")?;
    check_unit(input, "input")?;
    let next = GridWorldState {
        position: state.position + action + input,
        ..state
    };
    Ok((next, (action + input) as f64))
}

/// Action index 0 moves backward (−1), index 1 forward (+1).
pub fn action_to_move(action: usize) -> Result<i64> {
    match action {
        0 => Ok(-1),
        1 => Ok(1),
        _ => Err(Error::invalid(format!("grid action index {action} out of range"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorldConfig {
    pub horizon: usize,
    /// Append `z_t` to the observation (fully observed case).
    #[serde(default)]
    pub observe_input: bool,
    /// Probability that `z_{t+1} = z_t`; 0.5 gives i.i.d. uniform inputs.
    #[serde(default = "default_persistence")]
    pub input_persistence: f64,
}

fn default_persistence() -> f64 {
    0.5
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            observe_input: false,
            input_persistence: 0.5,
        }
    }
}

impl GridWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("grid horizon must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.input_persistence) {
            return Err(Error::invalid("input_persistence must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        1 + usize::from(self.observe_input)
    }
}

/// ±1 inputs of length `len`. With persistence 0.5 these are i.i.d. uniform.
pub fn gen_gridworld_inputs(len: usize, persistence: f64, id: u64, rng_seed: u64) -> Result<InputSequence> {
    if len == 0 {
        return Err(Error::invalid("input length must be >= 1"));
    }
    let mut rng = rng::rng_from(rng_seed, &[stream::INPUT, id]);
    let mut z: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(z);
        if !rng.random_bool(persistence) {
            z = -z;
        }
    }
    InputSequence::from_scalars(id, values)
}

#[derive(Debug, Clone)]
pub struct GridWorldEnv {
    config: GridWorldConfig,
    input: Option<InputSequence>,
    state: GridWorldState,
    t: usize,
}

impl GridWorldEnv {
    pub fn new(config: GridWorldConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            input: None,
            state: GridWorldState {
                position: 0,
                theta: 0.0,
            },
            t: 0,
        })
    }

    pub fn state(&self) -> GridWorldState {
        self.state
    }

    fn observe(&self) -> Result<Observation> {
        let mut v = vec![self.state.position as f64 / self.config.horizon as f64];
        if self.config.observe_input {
            let input = self.input.as_ref().ok_or_else(|| Error::invalid("reset before use"))?;
            let z = if self.t < self.config.horizon {
                input.require(self.t, self.t)?[0]
            } else {
                0.0
            };
            v.push(z);
        }
        Ok(Observation::new(v, self.config.observe_input))
    }
}

impl InputDrivenEnv for GridWorldEnv {
    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, input: &InputSequence) -> Result<Observation> {
        if input.dim() != 1 {
            return Err(Error::invalid("grid inputs are scalar"));
        }
        self.input = Some(input.clone());
        self.state.position = 0;
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let input = self.input.as_ref().ok_or_else(|| Error::invalid("reset before step"))?;
        if self.t >= self.config.horizon {
            return Err(Error::invalid("step after episode end"));
        }
        let z = input.require(self.t, self.t)?[0] as i64;
        let (next, reward) = gridworld_step(self.state, action_to_move(action)?, z)?;
        self.state = next;
        self.t += 1;
        Ok(StepOutcome {
            observation: self.observe()?,
            reward,
            done: self.t >= self.config.horizon,
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imdp::{discounted_returns, rollout};
    use crate::nn::{MlpConfig, MlpParams};
    use proptest::prelude::*;

    fn at(p: i64) -> GridWorldState {
        GridWorldState { position: p, theta: 0.0 }
    }

    #[test]
    fn step_examples() {
        assert_eq!(gridworld_step(at(0), 1, 1).unwrap(), (at(2), 2.0));
        assert_eq!(gridworld_step(at(5), 1, -1).unwrap(), (at(5), 0.0));
        assert_eq!(gridworld_step(at(0), -1, -1).unwrap(), (at(-2), -2.0));
        assert!(gridworld_step(at(0), 0, 1).is_err());
        assert!(gridworld_step(at(0), 1, 2).is_err());
    }

    #[test]
    fn short_input_is_exhausted() {
        let mut env = GridWorldEnv::new(GridWorldConfig { horizon: 5, ..Default::default() }).unwrap();
        let input = gen_gridworld_inputs(3, 0.5, 0, 1).unwrap();
        let policy = MlpParams::zeros(MlpConfig::new(vec![1, 2]).unwrap());
        assert!(matches!(
            rollout(&policy, &mut env, &input, 10, 0),
            Err(Error::InputExhausted { .. })
        ));
    }

    #[test]
    fn observe_input_appends_current_z() {
        let cfg = GridWorldConfig { horizon: 4, observe_input: true, ..Default::default() };
        let mut env = GridWorldEnv::new(cfg).unwrap();
        let input = InputSequence::from_scalars(0, vec![1.0, -1.0, 1.0, 1.0]).unwrap();
        let obs = env.reset(&input).unwrap();
        assert!(obs.includes_input);
        assert_eq!(*obs.values.last().unwrap(), 1.0);
        let out = env.step(1).unwrap();
        assert_eq!(*out.observation.values.last().unwrap(), -1.0);
    }

    #[test]
    fn zero_policy_rollouts_are_reproducible() {
        let mut env = GridWorldEnv::new(GridWorldConfig { horizon: 30, ..Default::default() }).unwrap();
        let input = gen_gridworld_inputs(30, 0.5, 9, 4).unwrap();
        let policy = MlpParams::zeros(MlpConfig::new(vec![1, 2]).unwrap());
        let a = rollout(&policy, &mut env, &input, 30, 77).unwrap();
        let b = rollout(&policy, &mut env, &input, 30, 77).unwrap();
        assert_eq!(a, b);
        let c = rollout(&policy, &mut env, &input, 30, 78).unwrap();
        assert_ne!(
            a.transitions.iter().map(|t| t.action).collect::<Vec<_>>(),
            c.transitions.iter().map(|t| t.action).collect::<Vec<_>>()
        );
    }

    #[test]
    fn uniform_policy_picks_forward_half_the_time() {
        let mut env = GridWorldEnv::new(GridWorldConfig { horizon: 1, ..Default::default() }).unwrap();
        let input = gen_gridworld_inputs(1, 0.5, 0, 0).unwrap();
        let policy = MlpParams::zeros(MlpConfig::new(vec![1, 2]).unwrap());
        let n = 10_000;
        let forward = (0..n)
            .filter(|&i| rollout(&policy, &mut env, &input, 1, i).unwrap().transitions[0].action == 1)
            .count();
        let p = forward as f64 / n as f64;
        // 3σ binomial interval at p = 0.5
        assert!((p - 0.5).abs() <= 0.015, "empirical P(+1) = {p}");
    }

    #[test]
    fn iid_inputs_are_balanced() {
        let s = gen_gridworld_inputs(100_000, 0.5, 1, 2).unwrap();
        let m: f64 = s.rows().map(|r| r[0]).sum::<f64>() / s.len() as f64;
        assert!(m.abs() < 0.015);
        assert!(s.rows().all(|r| r[0] == 1.0 || r[0] == -1.0));
    }

    proptest! {
        // Σγᵗr_t = Σγᵗa_t + Σγᵗz_t for a whole episode.
        #[test]
        fn discounted_reward_splits(moves in prop::collection::vec((any::<bool>(), any::<bool>()), 1..80), gamma in 0.0f64..=1.0) {
            let mut s = at(0);
            let (mut rs, mut as_, mut zs) = (vec![], vec![], vec![]);
            for (a, z) in moves {
                let (a, z) = (if a { 1 } else { -1 }, if z { 1 } else { -1 });
                let (n, r) = gridworld_step(s, a, z).unwrap();
                prop_assert_eq!(n.position, s.position + a + z);
                s = n;
                rs.push(r);
                as_.push(a as f64);
                zs.push(z as f64);
            }
            let g = |v: &[f64]| discounted_returns(v, gamma).unwrap()[0];
            prop_assert!((g(&rs) - (g(&as_) + g(&zs))).abs() <= 1e-12 * (1.0 + g(&rs).abs()));
            // with a dyadic discount every partial sum is exactly representable
            let h = |v: &[f64]| discounted_returns(v, 0.5).unwrap()[0];
            let k = rs.len().min(40);
            prop_assert_eq!(h(&rs[..k]), h(&as_[..k]) + h(&zs[..k]));
        }
    }
}
