//! Meta-learned value network, specialized per input sequence by a few SGD steps.

use super::value::{predict_values, value_loss, value_loss_grad, ValueBatch};
use crate::imdp::Trajectory;
use crate::nn::{sgd_step, AdamState, MlpParams};
use crate::{Error, Result};

pub const DEFAULT_INNER_LR: f64 = 0.1;
pub const DEFAULT_INNER_STEPS: usize = 5;
pub const DEFAULT_OUTER_LR: f64 = 1e-3;
pub const DEFAULT_K: usize = 8;
/// Inner-loop gradients are rescaled to at most this L2 norm. Returns are not
/// normalized, so without it the first adaptation steps on a fresh network
/// diverge whenever targets are in the hundreds.
pub const INNER_GRAD_CLIP: f64 = 1.0;

fn shared_sequence(rollouts: &[Trajectory]) -> Result<u64> {
    let first = rollouts
        .first()
        .ok_or_else(|| Error::invalid("meta adaptation needs at least one rollout"))?
        .input_seq_id;
    if let Some(t) = rollouts.iter().find(|t| t.input_seq_id != first) {
        return Err(Error::invalid(format!(
            "adaptation rollouts mix input sequences {first} and {}",
            t.input_seq_id
        )));
    }
    Ok(first)
}

/// `inner_steps` SGD steps of size `inner_lr` on the mean value loss of
/// `adaptation_rollouts`, starting from a copy of `meta_params`. Each step's
/// gradient is clipped to norm [`INNER_GRAD_CLIP`].
pub fn meta_adapt(
    meta_params: &MlpParams,
    adaptation_rollouts: &[Trajectory],
    gamma: f64,
    horizon: usize,
    inner_lr: f64,
    inner_steps: usize,
) -> Result<MlpParams> {
    shared_sequence(adaptation_rollouts)?;
    let batch = ValueBatch::from_trajectories(adaptation_rollouts, gamma, horizon)?;
    adapt_on_batch(meta_params, &batch, inner_lr, inner_steps)
}

fn adapt_on_batch(meta_params: &MlpParams, batch: &ValueBatch, inner_lr: f64, inner_steps: usize) -> Result<MlpParams> {
    let mut adapted = meta_params.clone();
    if inner_lr == 0.0 {
        return Ok(adapted);
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty adaptation rollouts"));
    }
    let n = batch.len() as f64;
    for _ in 0..inner_steps {
        let (_, mut grad) = value_loss_grad(&adapted, batch)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / n;
        let scale = if norm > INNER_GRAD_CLIP { INNER_GRAD_CLIP / norm } else { 1.0 } / n;
        grad.iter_mut().for_each(|g| *g *= scale);
        sgd_step(&mut adapted, &grad, inner_lr)?;
    }
    Ok(adapted)
}

/// Output of the cross-split evaluation.
#[derive(Debug, Clone)]
pub struct MetaValues {
    /// One baseline vector per rollout, in input order.
    pub values: Vec<Vec<f64>>,
    /// Adapted on the first half, used to predict the second.
    pub adapted_first: MlpParams,
    /// Adapted on the second half, used to predict the first.
    pub adapted_second: MlpParams,
}

/// Baselines for `k` rollouts that share one input sequence.
///
/// The second half is predicted by the network adapted on the first half and the
/// first half by the one adapted on the second, so no rollout influences its own
/// baseline.
pub fn meta_baseline_values(
    meta_params: &MlpParams,
    rollouts: &[Trajectory],
    gamma: f64,
    horizon: usize,
    inner_lr: f64,
    inner_steps: usize,
) -> Result<MetaValues> {
    let k = rollouts.len();
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::invalid(format!("meta baseline needs an even k >= 2, got {k}")));
    }
    shared_sequence(rollouts)?;
    let (first, second) = rollouts.split_at(k / 2);
    let adapted_first = meta_adapt(meta_params, first, gamma, horizon, inner_lr, inner_steps)?;
    let adapted_second = meta_adapt(meta_params, second, gamma, horizon, inner_lr, inner_steps)?;
    let mut values = Vec::with_capacity(k);
    for traj in first {
        values.push(predict_values(&adapted_second, traj, horizon)?);
    }
    for traj in second {
        values.push(predict_values(&adapted_first, traj, horizon)?);
    }
    Ok(MetaValues {
        values,
        adapted_first,
        adapted_second,
    })
}

/// First-order outer step: held-out loss gradients taken at the adapted
/// parameters are applied to the meta parameters through `optimizer`.
///
/// `first_half` / `second_half` are the rollouts each adapted network was
/// *not* trained on, i.e. `adapted_first` is scored on `second_half`.
/// Returns the mean held-out loss before the step.
#[allow(clippy::too_many_arguments)]
pub fn meta_outer_update(
    meta_params: &mut MlpParams,
    adapted_first: &MlpParams,
    adapted_second: &MlpParams,
    first_half: &[Trajectory],
    second_half: &[Trajectory],
    gamma: f64,
    horizon: usize,
    optimizer: &mut AdamState,
) -> Result<f64> {
    for p in [adapted_first, adapted_second] {
        if p.config() != meta_params.config() {
            return Err(Error::DimensionMismatch {
                context: "meta outer update",
                expected: meta_params.len(),
                got: p.len(),
            });
        }
    }
    let batch_first = ValueBatch::from_trajectories(first_half, gamma, horizon)?;
    let batch_second = ValueBatch::from_trajectories(second_half, gamma, horizon)?;
    let n = (batch_first.len() + batch_second.len()) as f64;
    if n == 0.0 {
        return Err(Error::invalid("empty held-out rollouts"));
    }
    let (l1, g1) = value_loss_grad(adapted_first, &batch_second)?;
    let (l2, g2) = value_loss_grad(adapted_second, &batch_first)?;
    let grad: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| (a + b) / n).collect();
    optimizer.step(meta_params, &grad)?;
    Ok((l1 + l2) / n)
}

/// Meta network together with its optimizer and adaptation hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaBaseline {
    pub params: MlpParams,
    pub optimizer: AdamState,
    pub inner_lr: f64,
    pub inner_steps: usize,
}

impl MetaBaseline {
    pub fn new(params: MlpParams, inner_lr: f64, inner_steps: usize, outer_lr: f64) -> Self {
        let optimizer = AdamState::new(params.len(), outer_lr);
        Self {
            params,
            optimizer,
            inner_lr,
            inner_steps,
        }
    }

    /// Cross-split baselines for one group, followed by the outer update.
    /// Returns the baselines and the held-out loss.
    pub fn values_and_update(&mut self, rollouts: &[Trajectory], gamma: f64, horizon: usize) -> Result<(Vec<Vec<f64>>, f64)> {
        let mv = meta_baseline_values(&self.params, rollouts, gamma, horizon, self.inner_lr, self.inner_steps)?;
        let (first, second) = rollouts.split_at(rollouts.len() / 2);
        let loss = meta_outer_update(
            &mut self.params,
            &mv.adapted_first,
            &mv.adapted_second,
            first,
            second,
            gamma,
            horizon,
            &mut self.optimizer,
        )?;
        Ok((mv.values, loss))
    }

    /// Mean squared error on `eval` after adapting on `adapt` (or without adaptation).
    pub fn held_out_mse(&self, adapt: &[Trajectory], eval: &[Trajectory], gamma: f64, horizon: usize, adapted: bool) -> Result<f64> {
        let p = if adapted {
            meta_adapt(&self.params, adapt, gamma, horizon, self.inner_lr, self.inner_steps)?
        } else {
            self.params.clone()
        };
        let batch = ValueBatch::from_trajectories(eval, gamma, horizon)?;
        if batch.is_empty() {
            return Err(Error::invalid("empty evaluation rollouts"));
        }
        Ok(value_loss(&p, &batch)? / batch.len() as f64)
    }
}
