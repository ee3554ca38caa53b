//! Policy evaluation on held-out input sequences and the two-server policy heatmap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::abr::{MpcAgent, MpcController};
use crate::envs::loadbalance::{LoadBalanceEnv, RandomAgent, ShortestQueueAgent};
use crate::envs::{EnvConfig, LoadBalanceConfig};
use crate::imdp::{run_episode, Agent, InputSequence, SoftmaxAgent};
use crate::nn::{softmax, MlpParams};
use crate::rng::{rng_from, stream};
use crate::{Error, Result};

/// Representative job size for heatmaps: the median of Pareto(100, 1.5).
pub const HEATMAP_JOB_SIZE: f64 = 158.740_105_196_819_95;

/// Which controller to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// Sample from the policy.
    Softmax,
    /// Arg-max of the policy logits.
    Greedy,
    ShortestQueue,
    Random,
    /// Model-predictive bitrate control with the given look-ahead.
    Mpc(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub id: u64,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sequence: Vec<SequenceStats>,
    pub mean: f64,
    /// Sample standard deviation over all episodes (0 for a single episode).
    pub std: f64,
    pub episodes: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.iter().all(|x| *x == xs[0]) {
        return (xs[0], 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn make_agent<'a>(controller: Controller, policy: Option<&'a MlpParams>) -> Result<Box<dyn Agent + 'a>> {
    let need = || policy.ok_or_else(|| Error::invalid("this controller needs policy parameters"));
    Ok(match controller {
        Controller::Softmax => Box::new(SoftmaxAgent {
            params: need()?,
            greedy: false,
        }),
        Controller::Greedy => Box::new(SoftmaxAgent {
            params: need()?,
            greedy: true,
        }),
        Controller::ShortestQueue => Box::new(ShortestQueueAgent),
        Controller::Random => Box::new(RandomAgent),
        Controller::Mpc(h) => Box::new(MpcAgent(MpcController::new(h))),
    })
}

/// Total-reward statistics of `controller` over `episodes` runs on each input.
pub fn evaluate_controller(
    controller: Controller,
    policy: Option<&MlpParams>,
    env: &EnvConfig,
    inputs: &[InputSequence],
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if inputs.is_empty() || episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one sequence and one episode"));
    }
    if let Some(p) = policy {
        let (i, o) = (p.config().input_dim(), p.config().output_dim());
        if i != env.obs_dim() || o != env.num_actions() {
            return Err(Error::DimensionMismatch {
                context: "policy for environment",
                expected: env.obs_dim(),
                got: i,
            });
        }
    }
    let jobs: Vec<(usize, usize)> = (0..inputs.len()).flat_map(|s| (0..episodes).map(move |e| (s, e))).collect();
    let totals: Vec<f64> = jobs
        .par_iter()
        .map(|&(s, e)| {
            let mut agent = make_agent(controller, policy)?;
            let mut e_env = env.build()?;
            let mut rng = rng_from(seed, &[stream::EVAL, inputs[s].id(), e as u64]);
            let traj = run_episode(agent.as_mut(), e_env.as_mut(), &inputs[s], env.episode_len(), &mut rng)?;
            Ok(traj.total_reward())
        })
        .collect::<Result<_>>()?;
    let per_sequence = inputs
        .iter()
        .zip(totals.chunks(episodes))
        .map(|(inp, xs)| {
            let (mean, std) = mean_std(xs);
            SequenceStats {
                id: inp.id(),
                mean,
                std,
                episodes: xs.len(),
            }
        })
        .collect();
    let (mean, std) = mean_std(&totals);
    Ok(EvalReport {
        per_sequence,
        mean,
        std,
        episodes: totals.len(),
    })
}

/// Evaluates a softmax policy, sampling actions or taking the arg-max.
pub fn evaluate_policy(
    policy: &MlpParams,
    env: &EnvConfig,
    inputs: &[InputSequence],
    episodes: usize,
    greedy: bool,
    seed: u64,
) -> Result<EvalReport> {
    let c = if greedy { Controller::Greedy } else { Controller::Softmax };
    evaluate_controller(c, Some(policy), env, inputs, episodes, seed)
}

/// `probs[i][j] = P(server 1 | q₁ = queue_values[i], q₂ = queue_values[j])`,
/// where server 1 is action index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub queue_values: Vec<f64>,
    pub job_size: f64,
    pub probs: Vec<Vec<f64>>,
}

impl Heatmap {
    /// Fraction of grid points with `|q₁ − q₂| ≥ min_rel_diff · max(q₁, q₂)` where the
    /// policy puts more than half its mass on the shorter queue. Returns the
    /// fraction and the number of such points.
    pub fn shortest_queue_agreement(&self, min_rel_diff: f64) -> (f64, usize) {
        let mut agree = 0;
        let mut total = 0;
        for (i, q1) in self.queue_values.iter().enumerate() {
            for (j, q2) in self.queue_values.iter().enumerate() {
                let gap = (q1 - q2).abs();
                if gap == 0.0 || gap < min_rel_diff * q1.max(*q2) {
                    continue;
                }
                total += 1;
                let p1 = self.probs[i][j];
                if (q1 < q2 && p1 > 0.5) || (q2 < q1 && p1 < 0.5) {
                    agree += 1;
                }
            }
        }
        if total == 0 {
            (0.0, 0)
        } else {
            (agree as f64 / total as f64, total)
        }
    }

    /// Rows indexed by `q₁`, with a header row of `q₂` values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q1\\q2");
        for q in &self.queue_values {
            out.push_str(&format!(",{q}"));
        }
        out.push('\n');
        for (q, row) in self.queue_values.iter().zip(&self.probs) {
            out.push_str(&format!("{q}"));
            for p in row {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Policy probabilities of choosing server 1 across a grid of queue backlogs
/// (in work units) for an incoming job of [`HEATMAP_JOB_SIZE`].
pub fn policy_heatmap(policy: &MlpParams, config: &LoadBalanceConfig, queue_values: &[f64]) -> Result<Heatmap> {
    if config.num_servers() != 2 {
        return Err(Error::invalid(format!("heatmap needs 2 servers, got {}", config.num_servers())));
    }
    let probs = queue_values
        .iter()
        .map(|&q1| {
            queue_values
                .iter()
                .map(|&q2| {
                    let obs = LoadBalanceEnv::observation_for(config, HEATMAP_JOB_SIZE, &[q1, q2]);
                    Ok(softmax(&policy.predict(&obs.values)?)[0])
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Heatmap {
        queue_values: queue_values.to_vec(),
        job_size: HEATMAP_JOB_SIZE,
        probs,
    })
}

/// `count` evenly spaced backlogs in `[0, max]`.
pub fn queue_grid(max: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![0.0; count];
    }
    (0..count).map(|i| max * i as f64 / (count - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;
    use crate::trainer::test_inputs;
    use approx::assert_relative_eq;

    #[test]
    fn job_size_constant_is_pareto_median() {
        assert_relative_eq!(HEATMAP_JOB_SIZE, 100.0 * 2f64.powf(1.0 / 1.5), epsilon = 1e-12);
    }

    #[test]
    fn uniform_policy_heatmap_is_half() {
        let cfg = LoadBalanceConfig::motivating_two_server();
        let p = MlpParams::zeros(MlpConfig::new(vec![3, 4, 2]).unwrap());
        let h = policy_heatmap(&p, &cfg, &queue_grid(1000.0, 5)).unwrap();
        assert!(h.probs.iter().flatten().all(|x| *x == 0.5));
        assert_eq!(h.shortest_queue_agreement(0.2).0, 0.0);
    }

    #[test]
    fn shorter_queue_preference() {
        let cfg = LoadBalanceConfig::motivating_two_server();
        // logit_0 = q₂ − q₁, logit_1 = q₁ − q₂ on scaled inputs
        let p = MlpParams::from_flat(MlpConfig::new(vec![3, 2]).unwrap(), vec![0.0, -1.0, 1.0, 0.0, 1.0, -1.0, 0.0, 0.0]).unwrap();
        let grid = queue_grid(2000.0, 6);
        let h = policy_heatmap(&p, &cfg, &grid).unwrap();
        for (i, q1) in grid.iter().enumerate() {
            for (j, q2) in grid.iter().enumerate() {
                assert_eq!(h.probs[i][j] > 0.5, q1 < q2);
            }
        }
        assert_eq!(h.shortest_queue_agreement(0.2).0, 1.0);
        assert!(h.to_csv().lines().count() == 7);
    }

    #[test]
    fn heatmap_rejects_ten_servers() {
        let cfg = LoadBalanceConfig::ten_server();
        let p = MlpParams::zeros(MlpConfig::new(vec![11, 10]).unwrap());
        assert!(policy_heatmap(&p, &cfg, &[0.0]).is_err());
    }

    #[test]
    fn greedy_on_deterministic_env_has_zero_spread() {
        let env = EnvConfig::preset("motivating2").unwrap();
        let inputs = test_inputs(&env, 1, 0).unwrap();
        let mut rng = rng_from(1, &[]);
        let p = MlpParams::glorot(MlpConfig::new(vec![3, 8, 2]).unwrap(), &mut rng);
        let r = evaluate_policy(&p, &env, &inputs, 3, true, 0).unwrap();
        assert_eq!(r.std, 0.0);
        assert_eq!(r.episodes, 3);
    }

    #[test]
    fn shortest_queue_is_deterministic() {
        let env = EnvConfig::preset("motivating2").unwrap();
        let inputs = test_inputs(&env, 3, 5).unwrap();
        let a = evaluate_controller(Controller::ShortestQueue, None, &env, &inputs, 1, 1).unwrap();
        let b = evaluate_controller(Controller::ShortestQueue, None, &env, &inputs, 1, 2).unwrap();
        assert_eq!(a, b);
        assert!(evaluate_controller(Controller::Softmax, None, &env, &inputs, 1, 1).is_err());
    }

    #[test]
    fn saturated_gridworld_policy_earns_one_per_step() {
        let env = EnvConfig::preset("gridworld").unwrap();
        let inputs = test_inputs(&env, 50, 2).unwrap();
        // bias strongly toward action 1 (move +1)
        let p = MlpParams::from_flat(MlpConfig::new(vec![1, 2]).unwrap(), vec![0.0, 0.0, -50.0, 50.0]).unwrap();
        let r = evaluate_policy(&p, &env, &inputs, 2, false, 0).unwrap();
        let per_step = r.mean / env.episode_len() as f64;
        // E[z] = 0, Var(total z) = horizon, so 4 standard errors of the mean
        let tol = 4.0 * (env.episode_len() as f64).sqrt() / (r.episodes as f64).sqrt() / env.episode_len() as f64;
        assert!((per_step - 1.0).abs() < tol, "{per_step}");
    }
}
