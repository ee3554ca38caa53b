//! The input-driven MDP contract shared by every environment and trainer.
//!
//! An episode is driven by a pre-generated [`InputSequence`] (the exogenous
//! process). Environments consume inputs in order and never influence them.

use std::any::Any;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::nn::{sample_categorical, MlpParams};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// One realization `z_0 … z_{T-1}` of the input process, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSequence {
    id: u64,
    dim: usize,
    values: Vec<f64>,
}

impl InputSequence {
    pub fn new(id: u64, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| Error::invalid("empty input sequence"))?;
        if dim == 0 {
            return Err(Error::invalid("input values must have dimension >= 1"));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::invalid(format!(
                "input row {bad} has dimension {}, expected {dim}",
                rows[bad].len()
            )));
        }
        Ok(Self {
            id,
            dim,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_scalars(id: u64, values: Vec<f64>) -> Result<Self> {
        Self::new(id, values.into_iter().map(|v| vec![v]).collect())
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<&[f64]> {
        self.values.get(t * self.dim..(t + 1) * self.dim)
    }

    /// Input `t`, or [`Error::InputExhausted`] on behalf of episode step `step`.
    pub fn require(&self, t: usize, step: usize) -> Result<&[f64]> {
        self.get(t).ok_or(Error::InputExhausted {
            step,
            needed: t,
            len: self.len(),
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    /// True when the trailing entries are the current input value (fully observed case).
    pub includes_input: bool,
}

impl Observation {
    pub fn new(values: Vec<f64>, includes_input: bool) -> Self {
        Self { values, includes_input }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// Environment whose dynamics are driven by an installed input sequence.
pub trait InputDrivenEnv: Send {
    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Installs `input` and returns the initial observation.
    fn reset(&mut self, input: &InputSequence) -> Result<Observation>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
    /// Concrete state access for heuristic controllers.
    fn as_any(&self) -> &dyn Any;
}

/// Chooses actions during an episode. Returns the action and its log-probability.
pub trait Agent {
    fn act(&mut self, obs: &Observation, env: &dyn InputDrivenEnv, rng: &mut Rng) -> Result<(usize, f64)>;
}

/// Softmax policy over an MLP's output logits.
pub struct SoftmaxAgent<'a> {
    pub params: &'a MlpParams,
    /// Pick the arg-max action instead of sampling (log-prob is still reported).
    pub greedy: bool,
}

impl Agent for SoftmaxAgent<'_> {
    fn act(&mut self, obs: &Observation, _env: &dyn InputDrivenEnv, rng: &mut Rng) -> Result<(usize, f64)> {
        let logits = self.params.predict(&obs.values)?;
        if self.greedy {
            crate::nn::ensure_finite(&logits, "policy logits")?;
            let a = argmax(&logits);
            Ok((a, crate::nn::log_softmax(&logits)[a]))
        } else {
            sample_categorical(&logits, rng)
        }
    }
}

/// Lowest index among the maxima.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: usize,
    pub observation: Observation,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub input_seq_id: u64,
    pub total_steps: usize,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Runs one episode of at most `max_steps` steps with an arbitrary agent.
pub fn run_episode(
    agent: &mut dyn Agent,
    env: &mut dyn InputDrivenEnv,
    input: &InputSequence,
    max_steps: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if max_steps == 0 {
        return Err(Error::invalid("max_steps must be >= 1"));
    }
    let mut obs = env.reset(input)?;
    let mut transitions = Vec::new();
    for t in 0..max_steps {
        let (action, log_prob) = agent.act(&obs, env, rng)?;
        let out = env.step(action)?;
        let done = out.done || t + 1 == max_steps;
        transitions.push(Transition {
            t,
            observation: std::mem::replace(&mut obs, out.observation),
            action,
            log_prob,
            reward: out.reward,
            done,
        });
        if out.done {
            break;
        }
    }
    let total_steps = transitions.len();
    Ok(Trajectory {
        transitions,
        input_seq_id: input.id(),
        total_steps,
    })
}

/// Samples an episode from the softmax policy `policy_params`.
///
/// The environment is reset with `input_seq`; action sampling uses a ChaCha8
/// stream derived from `rng_seed`, so identical arguments give bit-identical
/// trajectories.
pub fn rollout(
    policy_params: &MlpParams,
    env: &mut dyn InputDrivenEnv,
    input_seq: &InputSequence,
    max_steps: usize,
    rng_seed: u64,
) -> Result<Trajectory> {
    let mut rng = rng::rng_from(rng_seed, &[rng::stream::ROLLOUT]);
    let mut agent = SoftmaxAgent {
        params: policy_params,
        greedy: false,
    };
    run_episode(&mut agent, env, input_seq, max_steps, &mut rng)
}

/// `out[t] = Σ_{l≥0} γ^l · rewards[t+l]`, computed backwards so that
/// `out[t] == rewards[t] + γ·out[t+1]` holds exactly.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount {gamma} outside [0, 1]")));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::numerical(format!("reward {i} is not finite")));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    Ok(out)
}

/// Serialized transition; field order is
/// `step, observation, action, log_prob, reward, done`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub step: usize,
    pub observation: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub done: bool,
}

/// Writes one JSON object per transition, one per line.
pub fn write_trajectory_jsonl<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    for tr in &traj.transitions {
        let rec = TransitionRecord {
            step: tr.t,
            observation: tr.observation.values.clone(),
            action: tr.action,
            log_prob: tr.log_prob,
            reward: tr.reward,
            done: tr.done,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl<R: BufRead>(r: R) -> Result<Vec<TransitionRecord>> {
    r.lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
