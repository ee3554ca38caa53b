//! Synchronous advantage actor-critic with pluggable baselines.

pub mod gradient;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineKind, BaselineModel, GroupContext};
use crate::envs::EnvConfig;
use crate::imdp::{rollout, InputSequence, Trajectory};
use crate::nn::{entropy_with_grad, AdamState, MlpConfig, MlpParams};
use crate::rng::{derive_seed, rng_from, stream};
use crate::stats;
use crate::{Error, Result};

pub use gradient::{
    bias_report, gradient_variance, policy_gradient_estimate, weighted_score_sum, BiasReport, GradEstimate, VarianceStats,
    Visitation,
};

/// Ids `[0, N)` are the fixed training set, held-out test sequences start here.
pub const TEST_ID_BASE: u64 = 1_000_000;
/// Fresh per-iteration training sequences start here.
pub const FRESH_ID_BASE: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Rollouts per iteration.
    pub num_workers: usize,
    pub lr: f64,
    pub entropy_start: f64,
    pub entropy_end: f64,
    pub entropy_horizon: u64,
    pub policy_hidden: Vec<usize>,
    pub iterations: u64,
    pub visitation: Visitation,
    pub seed: u64,
    /// Adds elapsed seconds to every metrics record (breaks bitwise reproducibility of the stream).
    pub record_wall_time: bool,
    pub baseline: BaselineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            num_workers: 16,
            lr: 1e-3,
            entropy_start: 1.0,
            entropy_end: 0.001,
            entropy_horizon: 10_000,
            policy_hidden: vec![64, 32],
            iterations: 1000,
            visitation: Visitation::Undiscounted,
            seed: 0,
            record_wall_time: false,
            baseline: BaselineConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.num_workers == 0 {
            return Err(Error::Config("num_workers must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("lr must be finite and >= 0".into()));
        }
        if self.entropy_horizon == 0 {
            return Err(Error::Config("entropy_horizon must be >= 1".into()));
        }
        if !(self.entropy_start >= 0.0 && self.entropy_end >= 0.0) {
            return Err(Error::Config("entropy coefficients must be >= 0".into()));
        }
        if self.policy_hidden.contains(&0) {
            return Err(Error::Config("policy_hidden sizes must be positive".into()));
        }
        self.baseline.validate()?;
        if !self.num_workers.is_multiple_of(self.baseline.k) {
            return Err(Error::Config(format!(
                "num_workers ({}) must be a multiple of baseline.k ({})",
                self.num_workers, self.baseline.k
            )));
        }
        Ok(())
    }

    pub fn policy_config(&self, env: &EnvConfig) -> Result<MlpConfig> {
        MlpConfig::with_hidden(env.obs_dim(), &self.policy_hidden, env.num_actions())
    }

    pub fn groups(&self) -> usize {
        self.num_workers / self.baseline.k
    }
}

/// Linear decay from `start` to `end` over `horizon` iterations, constant afterwards.
pub fn entropy_coef(start: f64, end: f64, horizon: u64, iteration: u64) -> f64 {
    let frac = (iteration.min(horizon)) as f64 / horizon as f64;
    start + (end - start) * frac
}

/// One metrics record per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub mean_return: f64,
    pub entropy_coef: f64,
    pub grad_variance_trace: f64,
    pub baseline_kind: BaselineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    pub mean_entropy: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_loss: Option<f64>,
}

/// `num_workers` rollouts, `k` per input sequence.
fn rollout_inputs(
    config: &TrainConfig,
    env: &EnvConfig,
    train_inputs: &[InputSequence],
    iteration: u64,
) -> Result<Vec<InputSequence>> {
    let groups = config.groups() as u64;
    (0..groups)
        .map(|g| {
            if config.baseline.kind == BaselineKind::Multi {
                if train_inputs.is_empty() {
                    return Err(Error::invalid("multi-value training needs its fixed input sequences"));
                }
                let mut rng = rng_from(config.seed, &[stream::SCHEDULE, iteration, g]);
                let i = rand::Rng::random_range(&mut rng, 0..train_inputs.len());
                Ok(train_inputs[i].clone())
            } else {
                env.generate_input(FRESH_ID_BASE + iteration * groups + g, config.seed)
            }
        })
        .collect()
}

/// Rollouts for `(input, seed)` jobs, collected in parallel and returned in job order.
pub fn collect_rollouts(policy: &MlpParams, env: &EnvConfig, jobs: &[(&InputSequence, u64)]) -> Result<Vec<Trajectory>> {
    let max_steps = env.episode_len();
    jobs.par_iter()
        .map(|(input, seed)| {
            let mut e = env.build()?;
            rollout(policy, e.as_mut(), input, max_steps, *seed)
        })
        .collect()
}

/// Gradient of `Σ_t H(π(·|ω_t))`.
fn entropy_gradient(policy: &MlpParams, traj: &Trajectory) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; policy.len()];
    let mut total = 0.0;
    for tr in &traj.transitions {
        let (logits, cache) = policy.forward(&tr.observation.values)?;
        let (h, dh) = entropy_with_grad(&logits);
        total += h;
        policy.backward_accumulate(&cache, &dh, &mut grad)?;
    }
    Ok((total, grad))
}

/// Policy, optimizer and baseline of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub policy: MlpParams,
    pub optimizer: AdamState,
    pub baseline: BaselineModel,
    /// The fixed training sequences (multi-value baseline only).
    pub train_inputs: Vec<InputSequence>,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig, env: &EnvConfig) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let mut rng = rng_from(config.seed, &[stream::INIT]);
        let policy = MlpParams::glorot(config.policy_config(env)?, &mut rng);
        let optimizer = AdamState::new(policy.len(), config.lr);
        let train_inputs = if config.baseline.kind == BaselineKind::Multi {
            training_inputs(env, config.baseline.num_sequences, config.seed)?
        } else {
            Vec::new()
        };
        let ids: Vec<u64> = train_inputs.iter().map(InputSequence::id).collect();
        if config.baseline.kind == BaselineKind::Oracle && !matches!(env, EnvConfig::Gridworld(_)) {
            return Err(Error::Config("the oracle baseline is only available on the grid walker".into()));
        }
        let baseline = BaselineModel::new(&config.baseline, env.obs_dim(), &ids, &mut rng)?;
        Ok(Self {
            policy,
            optimizer,
            baseline,
            train_inputs,
            iteration: 0,
        })
    }

    pub fn step(&mut self, config: &TrainConfig, env: &EnvConfig) -> Result<IterationMetrics> {
        let m = a2c_iteration(config, env, &mut self.policy, &mut self.optimizer, &mut self.baseline, &self.train_inputs, self.iteration)?;
        self.iteration += 1;
        Ok(m)
    }
}

/// The fixed sequences `0..n`.
pub fn training_inputs(env: &EnvConfig, n: usize, seed: u64) -> Result<Vec<InputSequence>> {
    (0..n as u64).map(|id| env.generate_input(id, seed)).collect()
}

/// `n` held-out sequences disjoint from every training id.
pub fn test_inputs(env: &EnvConfig, n: usize, seed: u64) -> Result<Vec<InputSequence>> {
    (0..n as u64).map(|i| env.generate_input(TEST_ID_BASE + i, seed)).collect()
}

/// One synchronous iteration: collect rollouts, compute baselines (updating the
/// baseline model group by group), and take one Adam step on the policy.
pub fn a2c_iteration(
    config: &TrainConfig,
    env: &EnvConfig,
    policy: &mut MlpParams,
    optimizer: &mut AdamState,
    baseline: &mut BaselineModel,
    train_inputs: &[InputSequence],
    iteration: u64,
) -> Result<IterationMetrics> {
    let started = Instant::now();
    let k = config.baseline.k;
    let inputs = rollout_inputs(config, env, train_inputs, iteration)?;
    let jobs: Vec<(&InputSequence, u64)> = (0..config.num_workers)
        .map(|w| (&inputs[w / k], derive_seed(config.seed, &[stream::ROLLOUT, iteration, w as u64])))
        .collect();
    let trajs = collect_rollouts(policy, env, &jobs)?;

    let horizon = env.episode_len();
    let mut values = Vec::with_capacity(trajs.len());
    let mut losses = Vec::new();
    for (g, group) in trajs.chunks(k).enumerate() {
        let ctx = GroupContext {
            input: &inputs[g],
            policy,
            gamma: config.gamma,
            horizon,
        };
        let (v, loss) = baseline.values_and_update(group, &ctx)?;
        values.extend(v);
        losses.extend(loss);
    }

    let snapshot: &MlpParams = policy;
    let per_rollout: Vec<(GradEstimate, f64, Vec<f64>)> = trajs
        .par_iter()
        .zip(values.par_iter())
        .map(|(traj, b)| {
            let mut est = policy_gradient_estimate(traj, snapshot, b, config.gamma, config.visitation)?;
            est.iteration = iteration;
            let (h, hg) = entropy_gradient(snapshot, traj)?;
            Ok((est, h, hg))
        })
        .collect::<Result<_>>()?;

    let coef = entropy_coef(config.entropy_start, config.entropy_end, config.entropy_horizon, iteration);
    let n = trajs.len() as f64;
    let mut grad = vec![0.0; policy.len()];
    let mut steps = 0usize;
    let mut entropy_total = 0.0;
    for ((est, h, hg), traj) in per_rollout.iter().zip(&trajs) {
        for ((g, e), d) in grad.iter_mut().zip(&est.vector).zip(hg) {
            *g -= (e + coef * d) / n;
        }
        entropy_total += h;
        steps += traj.len();
    }
    let estimates: Vec<GradEstimate> = per_rollout.into_iter().map(|(e, _, _)| e).collect();
    let grad_variance_trace = if estimates.len() >= 2 {
        gradient_variance(&estimates)?.trace_of_covariance
    } else {
        0.0
    };
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite policy gradient at iteration {iteration} (baseline {})",
            baseline.kind()
        )));
    }
    optimizer.step(policy, &grad)?;

    let returns: Vec<f64> = trajs.iter().map(Trajectory::total_reward).collect();
    Ok(IterationMetrics {
        iteration,
        mean_return: stats::mean(&returns),
        entropy_coef: coef,
        grad_variance_trace,
        baseline_kind: baseline.kind(),
        wall_time: config.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        mean_entropy: entropy_total / steps.max(1) as f64,
        grad_norm,
        value_loss: (!losses.is_empty()).then(|| stats::mean(&losses)),
    })
}

/// Rollout seeds for a measurement, shared across baseline kinds so that
/// comparisons are paired.
pub fn measurement_jobs(inputs: &[InputSequence], per_input: usize, seed: u64) -> Vec<(&InputSequence, u64)> {
    inputs
        .iter()
        .enumerate()
        .flat_map(|(i, input)| {
            (0..per_input).map(move |j| (input, derive_seed(seed, &[stream::ANALYSIS, i as u64, j as u64])))
        })
        .collect()
}

/// Per-rollout gradient estimates under a frozen policy and baseline.
///
/// Rollouts are grouped `per_input` at a time on each input sequence; the
/// baseline model is not updated.
pub fn frozen_estimates(
    policy: &MlpParams,
    env: &EnvConfig,
    baseline: &BaselineModel,
    trajs: &[Trajectory],
    inputs: &[InputSequence],
    per_input: usize,
    gamma: f64,
    visitation: Visitation,
) -> Result<Vec<GradEstimate>> {
    let values = frozen_values(policy, env, baseline, trajs, inputs, per_input, gamma)?;
    trajs
        .par_iter()
        .zip(values.par_iter())
        .map(|(t, b)| policy_gradient_estimate(t, policy, b, gamma, visitation))
        .collect()
}

fn frozen_values(
    policy: &MlpParams,
    env: &EnvConfig,
    baseline: &BaselineModel,
    trajs: &[Trajectory],
    inputs: &[InputSequence],
    per_input: usize,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    if trajs.len() != inputs.len() * per_input {
        return Err(Error::invalid("rollouts do not match the measurement plan"));
    }
    let horizon = env.episode_len();
    let groups: Vec<Vec<Vec<f64>>> = trajs
        .par_chunks(per_input)
        .zip(inputs.par_iter())
        .map(|(group, input)| {
            let ctx = GroupContext {
                input,
                policy,
                gamma,
                horizon,
            };
            baseline.values(group, &ctx)
        })
        .collect::<Result<_>>()?;
    Ok(groups.into_iter().flatten().collect())
}

/// Monte Carlo estimate of `E[Σ_t ∇log π(a_t|ω_t) b_t]` under a frozen policy.
pub fn bias_estimate(
    policy: &MlpParams,
    env: &EnvConfig,
    baseline: &BaselineModel,
    inputs: &[InputSequence],
    per_input: usize,
    gamma: f64,
    seed: u64,
) -> Result<BiasReport> {
    let jobs = measurement_jobs(inputs, per_input, seed);
    let trajs = collect_rollouts(policy, env, &jobs)?;
    let values = frozen_values(policy, env, baseline, &trajs, inputs, per_input, gamma)?;
    let terms: Vec<Vec<f64>> = trajs
        .par_iter()
        .zip(values.par_iter())
        .map(|(t, b)| weighted_score_sum(policy, t, b))
        .collect::<Result<_>>()?;
    bias_report(&terms)
}

/// Gradient variance under each baseline on one shared set of rollouts.
pub fn paired_variance(
    policy: &MlpParams,
    env: &EnvConfig,
    baselines: &[&BaselineModel],
    inputs: &[InputSequence],
    per_input: usize,
    gamma: f64,
    visitation: Visitation,
    seed: u64,
) -> Result<Vec<VarianceStats>> {
    let jobs = measurement_jobs(inputs, per_input, seed);
    let trajs = collect_rollouts(policy, env, &jobs)?;
    baselines
        .iter()
        .map(|b| {
            let est = frozen_estimates(policy, env, b, &trajs, inputs, per_input, gamma, visitation)?;
            gradient_variance(&est)
        })
        .collect()
}

/// Trains only the baseline against a frozen policy, `iterations` times over
/// groups of `per_input` rollouts on each of `inputs`.
pub fn fit_baseline_frozen(
    policy: &MlpParams,
    env: &EnvConfig,
    baseline: &mut BaselineModel,
    inputs: &[InputSequence],
    per_input: usize,
    gamma: f64,
    iterations: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let horizon = env.episode_len();
    let mut losses = Vec::new();
    for it in 0..iterations {
        let jobs: Vec<(&InputSequence, u64)> = inputs
            .iter()
            .enumerate()
            .flat_map(|(i, input)| {
                (0..per_input).map(move |j| (input, derive_seed(seed, &[stream::SCHEDULE, it, i as u64, j as u64])))
            })
            .collect();
        let trajs = collect_rollouts(policy, env, &jobs)?;
        for (group, input) in trajs.chunks(per_input).zip(inputs) {
            let ctx = GroupContext {
                input,
                policy,
                gamma,
                horizon,
            };
            let (_, loss) = baseline.values_and_update(group, &ctx)?;
            losses.extend(loss);
        }
    }
    Ok(losses)
}

/// Like [`fit_baseline_frozen`], but every iteration draws `groups` fresh input
/// sequences, as training does for the state and meta baselines. Fitting a
/// state baseline on the sequences it is later measured on lets it memorize
/// them and act input-dependent.
pub fn fit_baseline_fresh(
    policy: &MlpParams,
    env: &EnvConfig,
    baseline: &mut BaselineModel,
    groups: usize,
    per_input: usize,
    gamma: f64,
    iterations: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    for it in 0..iterations {
        let inputs: Vec<InputSequence> = (0..groups as u64)
            .map(|g| env.generate_input(FRESH_ID_BASE + it * groups as u64 + g, seed))
            .collect::<Result<_>>()?;
        losses.extend(fit_baseline_frozen(policy, env, baseline, &inputs, per_input, gamma, 1, derive_seed(seed, &[it]))?);
    }
    Ok(losses)
}
