//! Small statistics helpers shared by the trainer, analysis and acceptance code.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator). NaN for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Variance estimate together with its standard error, `sqrt((m4 - s^4) / n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub value: f64,
    pub std_error: f64,
}

pub fn variance_with_error(xs: &[f64]) -> VarianceEstimate {
    let n = xs.len() as f64;
    let m = mean(xs);
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for x in xs {
        let d = (x - m) * (x - m);
        m2 += d;
        m4 += d * d;
    }
    let var_pop = m2 / n;
    let m4 = m4 / n;
    VarianceEstimate {
        value: m2 / (n - 1.0),
        std_error: ((m4 - var_pop * var_pop).max(0.0) / n).sqrt(),
    }
}

/// Pearson chi-square test of independence on a contingency table.
///
/// Rows or columns whose marginal is zero are dropped. Returns `(statistic,
/// degrees of freedom, p-value)`; a table that collapses to one row or column
/// yields `(0, 0, 1)`.
pub fn chi_square_independence(table: &[Vec<f64>]) -> (f64, usize, f64) {
    let rows: Vec<&Vec<f64>> = table
        .iter()
        .filter(|r| r.iter().sum::<f64>() > 0.0)
        .collect();
    if rows.is_empty() {
        return (0.0, 0, 1.0);
    }
    let ncols = rows[0].len();
    let col_tot: Vec<f64> = (0..ncols)
        .map(|j| rows.iter().map(|r| r[j]).sum())
        .collect();
    let cols: Vec<usize> = (0..ncols).filter(|&j| col_tot[j] > 0.0).collect();
    if rows.len() < 2 || cols.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let total: f64 = col_tot.iter().sum();
    let mut stat = 0.0;
    for r in &rows {
        let row_tot: f64 = r.iter().sum();
        for &j in &cols {
            let expected = row_tot * col_tot[j] / total;
            let d = r[j] - expected;
            stat += d * d / expected;
        }
    }
    let dof = (rows.len() - 1) * (cols.len() - 1);
    (stat, dof, chi_square_sf(stat, dof))
}

/// Upper tail `P(χ²_dof ≥ stat)`; `1` for zero degrees of freedom.
pub fn chi_square_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    match ChiSquared::new(dof as f64) {
        Ok(dist) => 1.0 - dist.cdf(stat),
        Err(_) => f64::NAN,
    }
}

/// One-sided paired t-test of `H1: mean(a - b) > 0`. Returns `(t, p)`.
pub fn paired_t_test_greater(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "paired samples must align");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let se = std_error(&diffs);
    let m = mean(&diffs);
    if se == 0.0 {
        let p = if m > 0.0 { 0.0 } else { 1.0 };
        return (if m > 0.0 { f64::INFINITY } else { 0.0 }, p);
    }
    let t = m / se;
    let dist = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64).expect("dof >= 1");
    (t, 1.0 - dist.cdf(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sample_variance_small_cases() {
        assert_relative_eq!(sample_variance(&[1.0, -1.0]), 2.0);
        assert!(sample_variance(&[3.0]).is_nan());
        assert_relative_eq!(sample_variance(&[2.0, 2.0, 2.0]), 0.0);
    }

    #[test]
    fn chi_square_on_independent_table_is_zero() {
        let (stat, dof, p) = chi_square_independence(&[vec![10.0, 20.0], vec![20.0, 40.0]]);
        assert_relative_eq!(stat, 0.0, epsilon = 1e-12);
        assert_eq!(dof, 1);
        assert_relative_eq!(p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chi_square_detects_dependence() {
        let (_, _, p) = chi_square_independence(&[vec![90.0, 10.0], vec![10.0, 90.0]]);
        assert!(p < 1e-6);
    }

    #[test]
    fn paired_t_test_direction() {
        let a = [2.0, 3.1, 4.0, 5.2, 6.0];
        let b = [1.0, 2.0, 3.2, 4.0, 5.1];
        let (t, p) = paired_t_test_greater(&a, &b);
        assert!(t > 0.0 && p < 0.01);
        let (_, p_rev) = paired_t_test_greater(&b, &a);
        assert!(p_rev > 0.99);
    }
}
