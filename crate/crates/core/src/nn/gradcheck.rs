//! Finite-difference checks of the policy log-probability gradient.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{log_softmax, softmax, softmax_logprob_grad, MlpConfig, MlpParams};
use crate::rng::{rng_from, stream};
use crate::Result;

pub const DEFAULT_EPS: f64 = 1e-6;

/// `‖g_backprop − g_fd‖∞ / max(‖g_backprop‖∞, ‖g_fd‖∞, 1e-8)` for
/// `g = ∇_θ log π(action | input)`, with central differences.
pub fn gradcheck_case(params: &MlpParams, input: &[f64], action: usize, eps: f64) -> Result<f64> {
    let (logits, cache) = params.forward(input)?;
    let (_, dlogits) = softmax_logprob_grad(&logits, action);
    let analytic = params.backward(&cache, &dlogits)?;
    let mut p = params.clone();
    let mut worst_diff: f64 = 0.0;
    let mut scale: f64 = 1e-8;
    for i in 0..analytic.len() {
        let orig = p.flat()[i];
        p.flat_mut()[i] = orig + eps;
        let up = log_softmax(&p.predict(input)?)[action];
        p.flat_mut()[i] = orig - eps;
        let down = log_softmax(&p.predict(input)?)[action];
        p.flat_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst_diff = worst_diff.max((numeric - analytic[i]).abs());
        scale = scale.max(numeric.abs()).max(analytic[i].abs());
    }
    Ok(worst_diff / scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub cases: usize,
    pub max_rel_error: f64,
    /// Largest `‖Σ_a π(a) ∇log π(a)‖∞` seen across the cases.
    pub max_score_residual: f64,
}

/// `‖Σ_a π(a|x) ∇_θ log π(a|x)‖∞`, which is zero in exact arithmetic.
pub fn score_identity_residual(params: &MlpParams, input: &[f64]) -> Result<f64> {
    let (logits, cache) = params.forward(input)?;
    let probs = softmax(&logits);
    let mut total = vec![0.0; params.len()];
    for (a, pa) in probs.iter().enumerate() {
        let (_, d) = softmax_logprob_grad(&logits, a);
        let weighted: Vec<f64> = d.iter().map(|x| x * pa).collect();
        params.backward_accumulate(&cache, &weighted, &mut total)?;
    }
    Ok(total.iter().map(|x| x.abs()).fold(0.0, f64::max))
}

/// `cases` random networks, inputs and actions.
pub fn gradcheck(config: &MlpConfig, cases: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = rng_from(seed, &[stream::ANALYSIS]);
    let mut report = GradcheckReport {
        cases,
        max_rel_error: 0.0,
        max_score_residual: 0.0,
    };
    for _ in 0..cases {
        let params = MlpParams::glorot(config.clone(), &mut rng);
        let input: Vec<f64> = (0..config.input_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let action = rng.random_range(0..config.output_dim());
        report.max_rel_error = report.max_rel_error.max(gradcheck_case(&params, &input, action, DEFAULT_EPS)?);
        report.max_score_residual = report.max_score_residual.max(score_identity_residual(&params, &input)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_network_passes() {
        let r = gradcheck(&MlpConfig::new(vec![3, 8, 4, 3]).unwrap(), 20, 1).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert!(r.max_score_residual < 1e-12, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // a wrong action index in the analytic side must show up as a large error
        let mut rng = rng_from(2, &[]);
        let p = MlpParams::glorot(MlpConfig::new(vec![2, 4, 2]).unwrap(), &mut rng);
        let (logits, cache) = p.forward(&[0.3, -0.7]).unwrap();
        let (_, d_wrong) = softmax_logprob_grad(&logits, 1);
        let wrong = p.backward(&cache, &d_wrong).unwrap();
        let right_err = gradcheck_case(&p, &[0.3, -0.7], 0, DEFAULT_EPS).unwrap();
        assert!(right_err < 1e-6);
        let (_, d_right) = softmax_logprob_grad(&logits, 0);
        let right = p.backward(&cache, &d_right).unwrap();
        let diff = wrong.iter().zip(&right).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-3);
    }
}
