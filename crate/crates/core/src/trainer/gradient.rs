//! Policy-gradient estimates and their variance and bias statistics.

use serde::{Deserialize, Serialize};

use crate::imdp::{discounted_returns, Trajectory};
use crate::nn::{softmax_logprob_grad, MlpParams};
use crate::{Error, Result};

/// Per-step weighting of the score terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visitation {
    /// Every step counts once.
    #[default]
    Undiscounted,
    /// Step `t` is weighted by `γ^t`.
    Discounted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub vector: Vec<f64>,
    pub rollout_count: usize,
    pub iteration: u64,
}

/// Gradient of `Σ_t w_t · log π(a_t | ω_t) · c_t` with respect to the policy parameters.
pub fn weighted_score_sum(policy: &MlpParams, traj: &Trajectory, coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != traj.len() {
        return Err(Error::DimensionMismatch {
            context: "per-step coefficients",
            expected: traj.len(),
            got: coeffs.len(),
        });
    }
    let mut grad = vec![0.0; policy.len()];
    for (tr, &c) in traj.transitions.iter().zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        let (logits, cache) = policy.forward(&tr.observation.values)?;
        let (_, dlogits) = softmax_logprob_grad(&logits, tr.action);
        let out: Vec<f64> = dlogits.iter().map(|d| d * c).collect();
        policy.backward_accumulate(&cache, &out, &mut grad)?;
    }
    Ok(grad)
}

fn step_weights(n: usize, gamma: f64, visitation: Visitation) -> Vec<f64> {
    match visitation {
        Visitation::Undiscounted => vec![1.0; n],
        Visitation::Discounted => {
            let mut w = Vec::with_capacity(n);
            let mut g = 1.0;
            for _ in 0..n {
                w.push(g);
                g *= gamma;
            }
            w
        }
    }
}

/// `Σ_t w_t ∇_θ log π(a_t | ω_t) (G_t − b_t)` with Monte Carlo returns `G_t`.
pub fn policy_gradient_estimate(
    traj: &Trajectory,
    policy: &MlpParams,
    baseline_values: &[f64],
    gamma: f64,
    visitation: Visitation,
) -> Result<GradEstimate> {
    if baseline_values.len() != traj.len() {
        return Err(Error::DimensionMismatch {
            context: "baseline values",
            expected: traj.len(),
            got: baseline_values.len(),
        });
    }
    let returns = discounted_returns(&traj.rewards(), gamma)?;
    let w = step_weights(traj.len(), gamma, visitation);
    let adv: Vec<f64> = returns
        .iter()
        .zip(baseline_values)
        .zip(&w)
        .map(|((g, b), w)| w * (g - b))
        .collect();
    let vector = weighted_score_sum(policy, traj, &adv)?;
    crate::nn::ensure_finite(&vector, "policy gradient")?;
    Ok(GradEstimate {
        vector,
        rollout_count: 1,
        iteration: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    /// `(1/(n−1)) Σ_i ‖g_i − ḡ‖²`.
    pub trace_of_covariance: f64,
    pub sample_count: usize,
    pub mean_vector_norm: f64,
    /// Unbiased variance of every coordinate; sums to the trace.
    pub per_coordinate: Vec<f64>,
}

pub fn gradient_variance(estimates: &[GradEstimate]) -> Result<VarianceStats> {
    let n = estimates.len();
    if n < 2 {
        return Err(Error::invalid(format!("gradient variance needs at least 2 estimates, got {n}")));
    }
    let dim = estimates[0].vector.len();
    if let Some(e) = estimates.iter().find(|e| e.vector.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "gradient estimates",
            expected: dim,
            got: e.vector.len(),
        });
    }
    let mut mean = vec![0.0; dim];
    for e in estimates {
        for (m, x) in mean.iter_mut().zip(&e.vector) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut per_coordinate = vec![0.0; dim];
    for e in estimates {
        for ((v, x), m) in per_coordinate.iter_mut().zip(&e.vector).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    per_coordinate.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    Ok(VarianceStats {
        trace_of_covariance: per_coordinate.iter().sum(),
        sample_count: n,
        mean_vector_norm: mean.iter().map(|m| m * m).sum::<f64>().sqrt(),
        per_coordinate,
    })
}

/// Monte Carlo mean of the baseline-only term `Σ_t ∇log π(a_t|ω_t) b_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub rollouts: usize,
}

impl BiasReport {
    /// Largest `|mean| / std_error` over coordinates with non-zero spread;
    /// a coordinate with zero spread counts only if its mean is non-zero.
    pub fn max_z_score(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_error)
            .map(|(m, s)| {
                if *s > 0.0 {
                    (m / s).abs()
                } else if *m == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn within(&self, z: f64) -> bool {
        self.max_z_score() <= z
    }
}

/// Summarizes per-rollout baseline terms.
pub fn bias_report(terms: &[Vec<f64>]) -> Result<BiasReport> {
    let n = terms.len();
    if n < 2 {
        return Err(Error::invalid("bias estimate needs at least 2 rollouts"));
    }
    let dim = terms[0].len();
    let mut mean = vec![0.0; dim];
    for t in terms {
        for (m, x) in mean.iter_mut().zip(t) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for t in terms {
        for ((v, x), m) in var.iter_mut().zip(t).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std_error = var.iter().map(|v| (v / (n - 1) as f64 / n as f64).sqrt()).collect();
    Ok(BiasReport {
        mean,
        std_error,
        rollouts: n,
    })
}
