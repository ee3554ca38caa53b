//! Monte Carlo check of the closed-form variance gap on the grid walker at `θ = 0`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{rng_from, stream};
use crate::{Error, Result};

/// Discount mass left after truncation must fall below this.
pub const TRUNCATION_TOLERANCE: f64 = 1e-4;
const SHARD: usize = 1 << 14;

/// `Var(a₀)Var(z₀) / (4(1−γ²)²)` with unit variances.
pub fn analytic_gap(gamma: f64) -> f64 {
    let d = 1.0 - gamma * gamma;
    1.0 / (4.0 * d * d)
}

/// Smallest `T` with `γ^T < TRUNCATION_TOLERANCE`.
pub fn truncation_horizon(gamma: f64) -> usize {
    let mut t = 1;
    let mut g = gamma;
    while g >= TRUNCATION_TOLERANCE {
        g *= gamma;
        t += 1;
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceGapReport {
    pub gamma: f64,
    pub trajectories: usize,
    pub horizon: usize,
    /// Variance of the estimator without a baseline.
    pub v1_mc: f64,
    pub v1_se: f64,
    /// Variance with the input-dependent baseline `Σ_{t'≥t} γ^{t'} z_{t'}` subtracted.
    pub v2_mc: f64,
    pub v2_se: f64,
    pub analytic_gap: f64,
    /// `sqrt(v1_se² + v2_se²)`.
    pub combined_se: f64,
    /// Standard error of `v1_mc − v2_mc` from the paired per-trajectory differences.
    pub paired_se: f64,
}

impl VarianceGapReport {
    pub fn mc_gap(&self) -> f64 {
        self.v1_mc - self.v2_mc
    }

    /// `|mc_gap − analytic_gap|` in units of the combined standard error.
    pub fn z_score(&self) -> f64 {
        (self.mc_gap() - self.analytic_gap).abs() / self.combined_se
    }

    pub fn within(&self, num_se: f64) -> bool {
        self.z_score() <= num_se
    }
}

/// Per-trajectory `(X₁, X₂)` for i.i.d. uniform `a_t, z_t ∈ {−1, +1}`.
fn sample_pair<R: Rng + ?Sized>(gamma: f64, horizon: usize, a: &mut [f64], z: &mut [f64], rng: &mut R) -> (f64, f64) {
    for t in 0..horizon {
        a[t] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        z[t] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let mut disc = gamma.powi(horizon as i32 - 1);
    let (mut tail_a, mut tail_z) = (0.0, 0.0);
    let (mut x1, mut x2) = (0.0, 0.0);
    for t in (0..horizon).rev() {
        tail_a += disc * a[t];
        tail_z += disc * z[t];
        x1 += 0.5 * a[t] * (tail_a + tail_z);
        x2 += 0.5 * a[t] * tail_a;
        if gamma > 0.0 {
            disc /= gamma;
        }
    }
    (x1, x2)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance and its standard error `sqrt((m₄ − s⁴)/n)`.
fn variance_with_se(xs: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = sq.iter().sum::<f64>() / (n - 1.0);
    let m2 = mean(&sq);
    let m4 = sq.iter().map(|s| s * s).sum::<f64>() / n;
    (var, ((m4 - m2 * m2) / n).max(0.0).sqrt(), sq)
}

/// Monte Carlo estimate of `V₁ − V₂` with a uniform policy.
///
/// `horizon` defaults to [`truncation_horizon`]; an explicit horizon must also
/// satisfy `γ^T < 10⁻⁴`.
pub fn gridworld_variance_gap(gamma: f64, num_trajectories: usize, horizon: Option<usize>, seed: u64) -> Result<VarianceGapReport> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    if num_trajectories < 2 {
        return Err(Error::invalid("need at least 2 trajectories"));
    }
    let horizon = match horizon {
        None => truncation_horizon(gamma),
        Some(t) if t >= 1 && gamma.powi(t as i32) < TRUNCATION_TOLERANCE => t,
        Some(t) => {
            return Err(Error::invalid(format!(
                "horizon {t} leaves discount mass gamma^T >= {TRUNCATION_TOLERANCE}"
            )))
        }
    };
    let shards = num_trajectories.div_ceil(SHARD);
    let pairs: Vec<(f64, f64)> = (0..shards)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = rng_from(seed, &[stream::ANALYSIS, i as u64]);
            let count = SHARD.min(num_trajectories - i * SHARD);
            let mut a = vec![0.0; horizon];
            let mut z = vec![0.0; horizon];
            (0..count)
                .map(|_| sample_pair(gamma, horizon, &mut a, &mut z, &mut rng))
                .collect::<Vec<_>>()
        })
        .collect();
    let x1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let x2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (v1, se1, sq1) = variance_with_se(&x1);
    let (v2, se2, sq2) = variance_with_se(&x2);
    let diff: Vec<f64> = sq1.iter().zip(&sq2).map(|(a, b)| a - b).collect();
    let md = mean(&diff);
    let n = diff.len() as f64;
    let paired_var = diff.iter().map(|d| (d - md) * (d - md)).sum::<f64>() / (n - 1.0);
    Ok(VarianceGapReport {
        gamma,
        trajectories: num_trajectories,
        horizon,
        v1_mc: v1,
        v1_se: se1,
        v2_mc: v2,
        v2_se: se2,
        analytic_gap: analytic_gap(gamma),
        combined_se: (se1 * se1 + se2 * se2).sqrt(),
        paired_se: (paired_var / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_values() {
        assert_relative_eq!(analytic_gap(0.5), 4.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(analytic_gap(0.9), 6.9252, epsilon = 1e-4);
        assert_eq!(analytic_gap(0.0), 0.25);
    }

    #[test]
    fn horizon_rule() {
        let t = truncation_horizon(0.9);
        assert!(0.9f64.powi(t as i32) < 1e-4);
        assert!(0.9f64.powi(t as i32 - 1) >= 1e-4);
        assert_eq!(truncation_horizon(0.0), 1);
        assert!(gridworld_variance_gap(0.9, 10, Some(10), 0).is_err());
        assert!(gridworld_variance_gap(1.0, 10, None, 0).is_err());
    }

    #[test]
    fn gamma_zero_is_exact_quarter() {
        // with one step, X₁ − X₂ = a z / 2 and X₂ = 1/2 exactly
        let r = gridworld_variance_gap(0.0, 1000, None, 3).unwrap();
        assert_eq!(r.v2_mc, 0.0);
        assert!(r.v1_mc >= 0.0);
        assert!(r.within(4.0), "{r:?}");
    }

    #[test]
    fn small_run_matches_closed_form() {
        let r = gridworld_variance_gap(0.5, 100_000, None, 1).unwrap();
        assert!(r.within(3.0), "{r:?}");
        assert!(r.v2_mc <= r.v1_mc + 3.0 * r.combined_se);
    }

    #[test]
    fn reproducible() {
        let a = gridworld_variance_gap(0.5, 20_000, None, 9).unwrap();
        let b = gridworld_variance_gap(0.5, 20_000, None, 9).unwrap();
        assert_eq!(a, b);
    }
}
