//! Small input-driven MDPs with explicit tables, solved by exhaustive enumeration.

use std::collections::BTreeMap;

use rand::Rng;

use crate::nn::softmax;
use crate::{Error, Result};

pub const MAX_HORIZON: usize = 6;
/// Upper bound on enumerated `(z, s, a)` paths.
pub const PATH_LIMIT: usize = 1 << 22;

/// Tabular input-driven MDP.
///
/// `state_kernel[s][a][z][s']`, `input_kernel[z][a][z']`, `reward[s][a][z]`.
/// The input kernel carries an action index only so that a broken variant
/// (where actions leak into the input process) can be built as a negative control.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerableMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_inputs: usize,
    pub initial_state: Vec<f64>,
    pub initial_input: Vec<f64>,
    pub state_kernel: Vec<Vec<Vec<Vec<f64>>>>,
    pub input_kernel: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub horizon: usize,
    pub gamma: f64,
    /// Case 1 observes `(s, z)`, case 2 only `s`.
    pub observe_input: bool,
}

fn random_dist<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn check_dist(d: &[f64], n: usize, what: &str) -> Result<()> {
    if d.len() != n {
        return Err(Error::invalid(format!("{what}: expected {n} entries, got {}", d.len())));
    }
    if d.iter().any(|p| !(0.0..=1.0).contains(p)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("{what} is not a probability vector")));
    }
    Ok(())
}

/// `(t, s_t, z_{t..T})`: everything an input-dependent baseline may condition on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StepKey {
    pub t: usize,
    pub state: usize,
    pub input_tail: Vec<usize>,
}

/// One fully enumerated episode and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub prob: f64,
    pub states: Vec<usize>,
    pub inputs: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Path {
    pub fn key(&self, t: usize) -> StepKey {
        StepKey {
            t,
            state: self.states[t],
            input_tail: self.inputs[t..].to_vec(),
        }
    }
}

impl EnumerableMdp {
    /// Random tables with an action-independent Markov input process.
    pub fn random<R: Rng + ?Sized>(
        num_states: usize,
        num_actions: usize,
        num_inputs: usize,
        horizon: usize,
        gamma: f64,
        observe_input: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let state_kernel = (0..num_states)
            .map(|_| {
                (0..num_actions)
                    .map(|_| (0..num_inputs).map(|_| random_dist(num_states, rng)).collect())
                    .collect()
            })
            .collect();
        let input_kernel = (0..num_inputs)
            .map(|_| {
                let row = random_dist(num_inputs, rng);
                vec![row; num_actions]
            })
            .collect();
        let reward = (0..num_states)
            .map(|_| {
                (0..num_actions)
                    .map(|_| (0..num_inputs).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let mdp = Self {
            num_states,
            num_actions,
            num_inputs,
            initial_state: random_dist(num_states, rng),
            initial_input: random_dist(num_inputs, rng),
            state_kernel,
            input_kernel,
            reward,
            horizon,
            gamma,
            observe_input,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// 2 states, 2 actions, 2 inputs.
    pub fn toy<R: Rng + ?Sized>(horizon: usize, observe_input: bool, rng: &mut R) -> Result<Self> {
        Self::random(2, 2, 2, horizon, 0.9, observe_input, rng)
    }

    /// Makes the next input copy the current action with probability `strength`.
    pub fn with_action_leak(mut self, strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::invalid("leak strength outside [0, 1]"));
        }
        for per_action in &mut self.input_kernel {
            for (a, row) in per_action.iter_mut().enumerate() {
                let target = a % self.num_inputs;
                for (z, p) in row.iter_mut().enumerate() {
                    *p = (1.0 - strength) * *p + if z == target { strength } else { 0.0 };
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na, nz) = (self.num_states, self.num_actions, self.num_inputs);
        if ns == 0 || na == 0 || nz == 0 {
            return Err(Error::invalid("empty state, action or input set"));
        }
        if self.horizon == 0 || self.horizon > MAX_HORIZON {
            return Err(Error::invalid(format!("horizon must be in 1..={MAX_HORIZON}")));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("discount outside [0, 1]"));
        }
        check_dist(&self.initial_state, ns, "initial state distribution")?;
        check_dist(&self.initial_input, nz, "initial input distribution")?;
        if self.state_kernel.len() != ns || self.reward.len() != ns || self.input_kernel.len() != nz {
            return Err(Error::invalid("table dimensions do not match"));
        }
        for s in 0..ns {
            if self.state_kernel[s].len() != na || self.reward[s].len() != na {
                return Err(Error::invalid("table dimensions do not match"));
            }
            for a in 0..na {
                if self.state_kernel[s][a].len() != nz || self.reward[s][a].len() != nz {
                    return Err(Error::invalid("table dimensions do not match"));
                }
                for z in 0..nz {
                    check_dist(&self.state_kernel[s][a][z], ns, "state kernel row")?;
                }
            }
        }
        for per_action in &self.input_kernel {
            if per_action.len() != na {
                return Err(Error::invalid("table dimensions do not match"));
            }
            for row in per_action {
                check_dist(row, nz, "input kernel row")?;
            }
        }
        Ok(())
    }

    /// True when the input kernel ignores the action.
    pub fn is_input_driven(&self) -> bool {
        self.input_kernel.iter().all(|per_action| per_action.iter().all(|row| row == &per_action[0]))
    }

    pub fn num_observations(&self) -> usize {
        if self.observe_input {
            self.num_states * self.num_inputs
        } else {
            self.num_states
        }
    }

    pub fn observation(&self, state: usize, input: usize) -> usize {
        if self.observe_input {
            state * self.num_inputs + input
        } else {
            state
        }
    }

    pub fn key_observation(&self, key: &StepKey) -> usize {
        self.observation(key.state, key.input_tail[0])
    }

    pub fn path_count(&self) -> usize {
        let per_step = self.num_states.saturating_mul(self.num_actions).saturating_mul(self.num_inputs);
        (0..self.horizon).fold(1usize, |acc, _| acc.saturating_mul(per_step))
    }

    /// Every episode with non-zero probability under `policy`.
    pub fn enumerate_paths(&self, policy: &TabularPolicy) -> Result<Vec<Path>> {
        self.check_policy(policy)?;
        let count = self.path_count();
        if count > PATH_LIMIT {
            return Err(Error::EnumerationBound { count: count as u64, limit: PATH_LIMIT as u64 });
        }
        let mut out = Vec::new();
        let mut cur = Path {
            prob: 1.0,
            states: Vec::new(),
            inputs: Vec::new(),
            actions: Vec::new(),
        };
        for s in 0..self.num_states {
            for z in 0..self.num_inputs {
                let p = self.initial_state[s] * self.initial_input[z];
                if p > 0.0 {
                    cur.prob = p;
                    cur.states.push(s);
                    cur.inputs.push(z);
                    self.expand(policy, &mut cur, &mut out);
                    cur.states.pop();
                    cur.inputs.pop();
                }
            }
        }
        Ok(out)
    }

    fn expand(&self, policy: &TabularPolicy, cur: &mut Path, out: &mut Vec<Path>) {
        let t = cur.states.len() - 1;
        let (s, z) = (cur.states[t], cur.inputs[t]);
        let pi = policy.probs(self.observation(s, z));
        let base = cur.prob;
        for (a, &pa) in pi.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            cur.actions.push(a);
            if t + 1 == self.horizon {
                out.push(Path {
                    prob: base * pa,
                    ..cur.clone()
                });
            } else {
                for (s2, &ps) in self.state_kernel[s][a][z].iter().enumerate() {
                    for (z2, &pz) in self.input_kernel[z][a].iter().enumerate() {
                        let p = base * pa * ps * pz;
                        if p > 0.0 {
                            cur.prob = p;
                            cur.states.push(s2);
                            cur.inputs.push(z2);
                            self.expand(policy, cur, out);
                            cur.states.pop();
                            cur.inputs.pop();
                        }
                    }
                }
            }
            cur.actions.pop();
        }
        cur.prob = base;
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.num_observations != self.num_observations() || policy.num_actions != self.num_actions {
            return Err(Error::DimensionMismatch {
                context: "tabular policy",
                expected: self.num_observations() * self.num_actions,
                got: policy.logits.len(),
            });
        }
        Ok(())
    }

    /// Discounted return from step `t` of a path.
    pub fn returns(&self, path: &Path) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        let mut acc = 0.0;
        for t in (0..self.horizon).rev() {
            acc = self.reward[path.states[t]][path.actions[t]][path.inputs[t]] + self.gamma * acc;
            out[t] = acc;
        }
        out
    }

    /// Unnormalized step visitation `Σ_t P(s_t = s, z_{t..T} = tail)`.
    pub fn visitation(&self, policy: &TabularPolicy) -> Result<BTreeMap<StepKey, f64>> {
        let mut rho = BTreeMap::new();
        for path in self.enumerate_paths(policy)? {
            for t in 0..self.horizon {
                *rho.entry(path.key(t)).or_insert(0.0) += path.prob;
            }
        }
        Ok(rho)
    }

    /// `Q(s_t, a, z_{t..T})` for every action, by backward recursion along the known input tail.
    pub fn q_values(&self, policy: &TabularPolicy, key: &StepKey) -> Result<Vec<f64>> {
        self.check_policy(policy)?;
        if key.t >= self.horizon || key.input_tail.len() != self.horizon - key.t || key.state >= self.num_states {
            return Err(Error::invalid("step key does not fit this MDP"));
        }
        Ok((0..self.num_actions)
            .map(|a| self.q_rec(policy, key.state, a, &key.input_tail))
            .collect())
    }

    fn q_rec(&self, policy: &TabularPolicy, s: usize, a: usize, tail: &[usize]) -> f64 {
        let z = tail[0];
        let mut q = self.reward[s][a][z];
        if tail.len() > 1 {
            let mut v = 0.0;
            for (s2, &ps) in self.state_kernel[s][a][z].iter().enumerate() {
                if ps == 0.0 {
                    continue;
                }
                let pi = policy.probs(self.observation(s2, tail[1]));
                let inner: f64 = pi
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(a2, p)| p * self.q_rec(policy, s2, a2, &tail[1..]))
                    .sum();
                v += ps * inner;
            }
            q += self.gamma * v;
        }
        q
    }
}

/// Softmax policy with one logit row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub num_observations: usize,
    pub num_actions: usize,
    pub logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(num_observations: usize, num_actions: usize) -> Self {
        Self {
            num_observations,
            num_actions,
            logits: vec![0.0; num_observations * num_actions],
        }
    }

    pub fn random<R: Rng + ?Sized>(num_observations: usize, num_actions: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            num_observations,
            num_actions,
            logits: (0..num_observations * num_actions)
                .map(|_| scale * rng.random_range(-1.0..1.0))
                .collect(),
        }
    }

    pub fn for_mdp_uniform(mdp: &EnumerableMdp) -> Self {
        Self::uniform(mdp.num_observations(), mdp.num_actions)
    }

    pub fn for_mdp_random<R: Rng + ?Sized>(mdp: &EnumerableMdp, scale: f64, rng: &mut R) -> Self {
        Self::random(mdp.num_observations(), mdp.num_actions, scale, rng)
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn row(&self, obs: usize) -> &[f64] {
        &self.logits[obs * self.num_actions..(obs + 1) * self.num_actions]
    }

    pub fn probs(&self, obs: usize) -> Vec<f64> {
        softmax(self.row(obs))
    }

    /// `∇_θ log π(a | obs)` restricted to row `obs`: `onehot(a) − π`.
    pub fn score_row(&self, obs: usize, action: usize) -> Vec<f64> {
        let mut g: Vec<f64> = self.probs(obs).iter().map(|p| -p).collect();
        g[action] += 1.0;
        g
    }

    /// `‖∇_θ log π(a | obs)‖²`.
    pub fn score_norm_sq(&self, obs: usize, action: usize) -> f64 {
        self.score_row(obs, action).iter().map(|x| x * x).sum()
    }

    /// Adds `weight · ∇_θ log π(a | obs)` into a full-length gradient.
    pub fn add_score(&self, obs: usize, action: usize, weight: f64, grad: &mut [f64]) {
        let off = obs * self.num_actions;
        for (i, s) in self.score_row(obs, action).into_iter().enumerate() {
            grad[off + i] += weight * s;
        }
    }
}
