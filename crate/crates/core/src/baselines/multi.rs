//! One value network per pre-generated input sequence.

use std::collections::BTreeMap;

use rand::Rng;

use super::value::{fit_batch, predict_values, ValueBatch};
use crate::imdp::Trajectory;
use crate::nn::{AdamState, MlpConfig, MlpParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiValue {
    nets: Vec<MlpParams>,
    optimizers: Vec<AdamState>,
    index: BTreeMap<u64, usize>,
}

impl MultiValue {
    /// Independently initialized networks, one per id in `sequence_ids`.
    pub fn new<R: Rng + ?Sized>(sequence_ids: &[u64], config: &MlpConfig, lr: f64, rng: &mut R) -> Result<Self> {
        if sequence_ids.is_empty() {
            return Err(Error::invalid("multi-value baseline needs at least one sequence"));
        }
        let nets: Vec<MlpParams> = sequence_ids
            .iter()
            .map(|_| MlpParams::glorot(config.clone(), rng))
            .collect();
        Self::from_parts(sequence_ids.to_vec(), nets, lr)
    }

    pub fn from_parts(sequence_ids: Vec<u64>, nets: Vec<MlpParams>, lr: f64) -> Result<Self> {
        if sequence_ids.len() != nets.len() {
            return Err(Error::invalid("one network per sequence id"));
        }
        let mut index = BTreeMap::new();
        for (i, id) in sequence_ids.iter().enumerate() {
            if index.insert(*id, i).is_some() {
                return Err(Error::invalid(format!("duplicate sequence id {id}")));
            }
        }
        let optimizers = nets.iter().map(|n| AdamState::new(n.len(), lr)).collect();
        Ok(Self { nets, optimizers, index })
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    /// Sequence ids in network order.
    pub fn sequence_ids(&self) -> Vec<u64> {
        let mut ids = vec![0; self.nets.len()];
        for (id, &i) in &self.index {
            ids[i] = *id;
        }
        ids
    }

    pub fn networks(&self) -> &[MlpParams] {
        &self.nets
    }

    pub fn network(&self, id: u64) -> Result<&MlpParams> {
        self.index
            .get(&id)
            .map(|&i| &self.nets[i])
            .ok_or(Error::UnknownSequence(id))
    }

    pub fn predict(&self, traj: &Trajectory, horizon: usize) -> Result<Vec<f64>> {
        predict_values(self.network(traj.input_seq_id)?, traj, horizon)
    }

    /// One Adam step for the network keyed by `input_seq_id` on rollouts of that
    /// sequence. Every other network is left untouched. Returns the mean loss
    /// before the step.
    pub fn train_step(&mut self, input_seq_id: u64, trajectories: &[Trajectory], gamma: f64, horizon: usize) -> Result<f64> {
        let &i = self.index.get(&input_seq_id).ok_or(Error::UnknownSequence(input_seq_id))?;
        if let Some(t) = trajectories.iter().find(|t| t.input_seq_id != input_seq_id) {
            return Err(Error::invalid(format!(
                "rollout from sequence {} passed to network {input_seq_id}",
                t.input_seq_id
            )));
        }
        let batch = ValueBatch::from_trajectories(trajectories, gamma, horizon)?;
        fit_batch(&mut self.nets[i], &batch, &mut self.optimizers[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::value::mean_value_loss;
    use crate::envs::gridworld::{gen_gridworld_inputs, GridWorldConfig, GridWorldEnv};
    use crate::imdp::rollout;
    use crate::rng::rng_from;

    fn setup() -> (MultiValue, GridWorldEnv, MlpParams) {
        let mut rng = rng_from(0, &[]);
        let cfg = MlpConfig::new(vec![2, 16, 16, 1]).unwrap();
        let mv = MultiValue::new(&[0, 1], &cfg, 1e-2, &mut rng).unwrap();
        let env = GridWorldEnv::new(GridWorldConfig { horizon: 20, ..Default::default() }).unwrap();
        let policy = MlpParams::zeros(MlpConfig::new(vec![1, 2]).unwrap());
        (mv, env, policy)
    }

    #[test]
    fn training_one_sequence_leaves_others_bitwise_unchanged() {
        let (mut mv, mut env, policy) = setup();
        let seq = gen_gridworld_inputs(20, 0.5, 0, 1).unwrap();
        let trajs: Vec<_> = (0..4).map(|s| rollout(&policy, &mut env, &seq, 20, s).unwrap()).collect();
        let before = mv.network(1).unwrap().clone();
        let before0 = mv.network(0).unwrap().clone();
        mv.train_step(0, &trajs, 0.9, 20).unwrap();
        assert_eq!(mv.network(1).unwrap(), &before);
        assert_ne!(mv.network(0).unwrap(), &before0);
    }

    #[test]
    fn unknown_sequence_is_rejected() {
        let (mut mv, mut env, policy) = setup();
        let seq = gen_gridworld_inputs(20, 0.5, 7, 1).unwrap();
        let traj = rollout(&policy, &mut env, &seq, 20, 0).unwrap();
        assert!(matches!(mv.train_step(7, std::slice::from_ref(&traj), 0.9, 20), Err(Error::UnknownSequence(7))));
        assert!(matches!(mv.predict(&traj, 20), Err(Error::UnknownSequence(7))));
        // mismatched rollout id
        assert!(mv.train_step(0, &[traj], 0.9, 20).is_err());
    }

    #[test]
    fn repeated_sequence_training_reduces_held_out_loss() {
        let (mut mv, mut env, policy) = setup();
        let seq = gen_gridworld_inputs(20, 0.5, 0, 5).unwrap();
        let held: Vec<_> = (1000..1016).map(|s| rollout(&policy, &mut env, &seq, 20, s).unwrap()).collect();
        let held_batch = ValueBatch::from_trajectories(&held, 0.9, 20).unwrap();
        let initial = mean_value_loss(mv.network(0).unwrap(), &held_batch).unwrap();
        for it in 0..200u64 {
            let trajs: Vec<_> = (0..4).map(|s| rollout(&policy, &mut env, &seq, 20, it * 4 + s).unwrap()).collect();
            mv.train_step(0, &trajs, 0.9, 20).unwrap();
        }
        let after = mean_value_loss(mv.network(0).unwrap(), &held_batch).unwrap();
        assert!(after < initial, "held-out loss {initial} -> {after}");
    }

    #[test]
    fn diverging_sequences_give_different_predictions() {
        let (mut mv, mut env, policy) = setup();
        let s0 = crate::imdp::InputSequence::from_scalars(0, vec![1.0; 20]).unwrap();
        let s1 = crate::imdp::InputSequence::from_scalars(1, vec![-1.0; 20]).unwrap();
        for it in 0..50u64 {
            let a: Vec<_> = (0..2).map(|s| rollout(&policy, &mut env, &s0, 20, it * 2 + s).unwrap()).collect();
            let b: Vec<_> = (0..2).map(|s| rollout(&policy, &mut env, &s1, 20, it * 2 + s).unwrap()).collect();
            mv.train_step(0, &a, 0.9, 20).unwrap();
            mv.train_step(1, &b, 0.9, 20).unwrap();
        }
        let x = super::super::value::critic_features(&[0.0], 0, 20);
        let p0 = mv.network(0).unwrap().predict(&x).unwrap()[0];
        let p1 = mv.network(1).unwrap().predict(&x).unwrap()[0];
        assert!(p0 > p1 + 1.0, "{p0} vs {p1}");
    }
}
