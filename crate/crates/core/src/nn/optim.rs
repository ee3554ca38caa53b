use serde::{Deserialize, Serialize};

use super::{ensure_finite, MlpParams};
use crate::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update in place. Rejects non-finite gradients before touching any state.
    pub fn step(&mut self, params: &mut MlpParams, grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::DimensionMismatch {
                context: "adam step",
                expected: params.len(),
                got: grad.len(),
            });
        }
        ensure_finite(grad, "gradient")?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .flat_mut()
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// `params ← params − lr · grad`.
pub fn sgd_step(params: &mut MlpParams, grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "sgd step",
            expected: params.len(),
            got: grad.len(),
        });
    }
    ensure_finite(grad, "gradient")?;
    if lr == 0.0 {
        return Ok(());
    }
    for (p, g) in params.flat_mut().iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;
    use approx::assert_relative_eq;

    fn params(vals: &[f64]) -> MlpParams {
        // [1, n] linear net has 2n parameters; pad with zeros
        let cfg = MlpConfig::new(vec![1, vals.len() / 2]).unwrap();
        MlpParams::from_flat(cfg, vals.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_on_fresh_state_leaves_params() {
        let mut p = params(&[1.0, -2.0, 0.5, 3.0]);
        let before = p.clone();
        let mut adam = AdamState::new(4, 1e-3);
        adam.step(&mut p, &[0.0; 4]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = params(&[0.0; 4]);
        let g = [3.0, -0.01, 250.0, -7.0];
        let mut adam = AdamState::new(4, 1e-3);
        adam.step(&mut p, &g).unwrap();
        for (pi, gi) in p.flat().iter().zip(&g) {
            assert_relative_eq!(*pi, -1e-3 * gi.signum(), epsilon = 1e-3 * 1e-5);
        }
    }

    #[test]
    fn two_steps_follow_the_recurrence() {
        let mut p = params(&[0.0, 0.0]);
        let g = [0.4, -2.0];
        let mut adam = AdamState::new(2, 0.01);
        adam.step(&mut p, &g).unwrap();
        adam.step(&mut p, &g).unwrap();
        assert_eq!(adam.step_count, 2);
        for (i, gi) in g.iter().enumerate() {
            // m_2 = (1-β1)(β1 + 1) g = (1 - β1²) g
            assert_relative_eq!(adam.m[i], (1.0 - 0.9f64.powi(2)) * gi, epsilon = 1e-15);
            assert_relative_eq!(adam.v[i], (1.0 - 0.999f64.powi(2)) * gi * gi, epsilon = 1e-15);
            // both bias-corrected moments equal g and g², so each step is ≈ −lr·sign(g)
            assert_relative_eq!(p.flat()[i], -0.02 * gi.signum(), epsilon = 1e-8);
        }
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut p = params(&[0.0, 0.0]);
        let mut adam = AdamState::new(2, 0.01);
        assert!(matches!(
            adam.step(&mut p, &[f64::NAN, 0.0]),
            Err(Error::NumericalFailure(_))
        ));
        assert_eq!(adam.step_count, 0);
        assert!(sgd_step(&mut p, &[f64::INFINITY, 0.0], 0.1).is_err());
    }

    #[test]
    fn sgd_contract() {
        let mut p = params(&[1.0, 2.0]);
        sgd_step(&mut p, &[5.0, 5.0], 0.0).unwrap();
        assert_eq!(p.flat(), &[1.0, 2.0]);

        let mut z = params(&[0.0, 0.0]);
        sgd_step(&mut z, &[0.25, -4.0], 1.0).unwrap();
        assert_eq!(z.flat(), &[-0.25, 4.0]);

        let mut q = params(&[0.3, -0.7, 1.1, 2.2]);
        let g = [0.1, 0.2, -0.3, 0.4];
        let expect: Vec<f64> = q.flat().iter().zip(&g).map(|(p, g)| p - 0.05 * g).collect();
        sgd_step(&mut q, &g, 0.05).unwrap();
        assert_eq!(q.flat(), &expect[..]);
    }
}
