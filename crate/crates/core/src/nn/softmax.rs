use rand::Rng;

use crate::Result;

fn max_of(logits: &[f64]) -> f64 {
    logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = max_of(logits);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = max_of(logits);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `log π(a)` and its gradient with respect to the logits, `onehot(a) − softmax`.
pub fn softmax_logprob_grad(logits: &[f64], action: usize) -> (f64, Vec<f64>) {
    let probs = softmax(logits);
    let log_prob = log_softmax(logits)[action];
    let mut grad: Vec<f64> = probs.iter().map(|p| -p).collect();
    grad[action] += 1.0;
    (log_prob, grad)
}

/// Entropy of the softmax distribution and its gradient with respect to the logits,
/// `−p_i (log p_i + H)`.
pub fn entropy_with_grad(logits: &[f64]) -> (f64, Vec<f64>) {
    let probs = softmax(logits);
    let logp = log_softmax(logits);
    let h: f64 = -probs
        .iter()
        .zip(&logp)
        .map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 })
        .sum::<f64>();
    let grad = probs
        .iter()
        .zip(&logp)
        .map(|(p, lp)| if *p > 0.0 { -p * (lp + h) } else { 0.0 })
        .collect();
    (h, grad)
}

/// Inverse-CDF draw from a categorical distribution given by logits.
///
/// Returns `(action, log_prob)`; fails on non-finite logits.
pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    super::ensure_finite(logits, "policy logits")?;
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut action = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            action = i;
            break;
        }
    }
    Ok((action, log_softmax(logits)[action]))
}
