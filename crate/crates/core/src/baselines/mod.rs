//! Baselines subtracted from Monte Carlo returns in the policy-gradient estimator.

pub mod meta;
pub mod multi;
pub mod oracle;
pub mod value;

use serde::{Deserialize, Serialize};

use crate::imdp::{InputSequence, Trajectory};
use crate::nn::{AdamState, Checkpoint, MlpConfig, MlpParams};
use crate::{Error, Result};

pub use meta::{meta_adapt, meta_baseline_values, meta_outer_update, MetaBaseline, MetaValues};
pub use multi::MultiValue;
pub use oracle::{gridworld_oracle_values, oracle_optimal_baseline, oracle_table};
pub use value::{critic_features, mean_value_loss, predict_values, state_value_fit, value_loss, ValueBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// `b ≡ 0`.
    None,
    State,
    Multi,
    Meta,
    /// Analytic input-dependent baseline; grid walker only.
    Oracle,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [Self::None, Self::State, Self::Multi, Self::Meta, Self::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::State => "state",
            Self::Multi => "multi",
            Self::Meta => "meta",
            Self::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline kind {s:?} (known: none, state, multi, meta, oracle)")))
    }

    /// Whether the baseline sees the future input sequence.
    pub fn input_dependent(self) -> bool {
        matches!(self, Self::Multi | Self::Meta | Self::Oracle)
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters shared by the trainable baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub hidden: Vec<usize>,
    /// Adam step size for state and multi-value networks.
    pub value_lr: f64,
    /// Rollouts per input sequence.
    pub k: usize,
    /// Number of fixed training sequences for the multi-value baseline.
    pub num_sequences: usize,
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub outer_lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::State,
            hidden: vec![64, 32],
            value_lr: 1e-3,
            k: meta::DEFAULT_K,
            num_sequences: 10,
            inner_lr: meta::DEFAULT_INNER_LR,
            inner_steps: meta::DEFAULT_INNER_STEPS,
            outer_lr: meta::DEFAULT_OUTER_LR,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("baseline.k must be >= 1".into()));
        }
        if self.kind == BaselineKind::Meta && !self.k.is_multiple_of(2) {
            return Err(Error::Config(format!("meta baseline needs an even baseline.k, got {}", self.k)));
        }
        if self.kind == BaselineKind::Multi && self.num_sequences == 0 {
            return Err(Error::Config("baseline.num_sequences must be >= 1".into()));
        }
        for (name, v) in [("value_lr", self.value_lr), ("inner_lr", self.inner_lr), ("outer_lr", self.outer_lr)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("baseline.{name} must be finite and >= 0")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("baseline.hidden sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn critic_config(&self, obs_dim: usize) -> Result<MlpConfig> {
        MlpConfig::with_hidden(obs_dim + 1, &self.hidden, 1)
    }
}

/// A baseline together with whatever trainable state it carries.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    None,
    State { params: MlpParams, optimizer: AdamState },
    Multi(MultiValue),
    Meta(MetaBaseline),
    Oracle,
}

/// Everything a baseline may look at when valuing one group of rollouts.
pub struct GroupContext<'a> {
    pub input: &'a InputSequence,
    pub policy: &'a MlpParams,
    pub gamma: f64,
    pub horizon: usize,
}

impl BaselineModel {
    /// Fresh model. `sequence_ids` is only used by the multi-value kind.
    pub fn new<R: rand::Rng + ?Sized>(
        config: &BaselineConfig,
        obs_dim: usize,
        sequence_ids: &[u64],
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let critic = config.critic_config(obs_dim)?;
        Ok(match config.kind {
            BaselineKind::None => Self::None,
            BaselineKind::State => {
                let params = MlpParams::glorot(critic, rng);
                let optimizer = AdamState::new(params.len(), config.value_lr);
                Self::State { params, optimizer }
            }
            BaselineKind::Multi => Self::Multi(MultiValue::new(sequence_ids, &critic, config.value_lr, rng)?),
            BaselineKind::Meta => Self::Meta(MetaBaseline::new(
                MlpParams::glorot(critic, rng),
                config.inner_lr,
                config.inner_steps,
                config.outer_lr,
            )),
            BaselineKind::Oracle => Self::Oracle,
        })
    }

    pub fn kind(&self) -> BaselineKind {
        match self {
            Self::None => BaselineKind::None,
            Self::State { .. } => BaselineKind::State,
            Self::Multi(_) => BaselineKind::Multi,
            Self::Meta(_) => BaselineKind::Meta,
            Self::Oracle => BaselineKind::Oracle,
        }
    }

    /// Per-step baselines for a group of rollouts on `ctx.input`, without
    /// changing the model.
    pub fn values(&self, group: &[Trajectory], ctx: &GroupContext<'_>) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::None => Ok(group.iter().map(|t| vec![0.0; t.len()]).collect()),
            Self::State { params, .. } => group.iter().map(|t| predict_values(params, t, ctx.horizon)).collect(),
            Self::Multi(mv) => group.iter().map(|t| mv.predict(t, ctx.horizon)).collect(),
            Self::Meta(mb) => Ok(meta_baseline_values(&mb.params, group, ctx.gamma, ctx.horizon, mb.inner_lr, mb.inner_steps)?.values),
            Self::Oracle => group
                .iter()
                .map(|t| gridworld_oracle_values(ctx.policy, t, ctx.input, ctx.gamma))
                .collect(),
        }
    }

    /// Baselines for the group (computed before any update), then one training
    /// step on it. Returns the values and the mean value loss, if any.
    pub fn values_and_update(&mut self, group: &[Trajectory], ctx: &GroupContext<'_>) -> Result<(Vec<Vec<f64>>, Option<f64>)> {
        match self {
            Self::Meta(mb) => {
                let (v, loss) = mb.values_and_update(group, ctx.gamma, ctx.horizon)?;
                Ok((v, Some(loss)))
            }
            _ => {
                let v = self.values(group, ctx)?;
                let loss = match self {
                    Self::State { params, optimizer } => Some(state_value_fit(params, group, ctx.gamma, ctx.horizon, optimizer)?),
                    Self::Multi(mv) => Some(mv.train_step(ctx.input.id(), group, ctx.gamma, ctx.horizon)?),
                    _ => None,
                };
                Ok((v, loss))
            }
        }
    }

    /// Network parameters as a checkpoint tagged with the kind.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let kind = self.kind().name().to_string();
        match self {
            Self::None | Self::Oracle => Checkpoint {
                kind,
                networks: Vec::new(),
                sequence_ids: Vec::new(),
            },
            Self::State { params, .. } => Checkpoint::single(kind, params.clone()),
            Self::Meta(mb) => Checkpoint::single(kind, mb.params.clone()),
            Self::Multi(mv) => Checkpoint {
                kind,
                networks: mv.networks().to_vec(),
                sequence_ids: mv.sequence_ids(),
            },
        }
    }

    /// Rebuilds a model from a checkpoint; optimizer state starts fresh.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: &BaselineConfig) -> Result<Self> {
        let kind = BaselineKind::parse(&ckpt.kind).map_err(|_| Error::Checkpoint(format!("unknown baseline kind {:?}", ckpt.kind)))?;
        let single = || -> Result<MlpParams> {
            match ckpt.networks.as_slice() {
                [p] => Ok(p.clone()),
                other => Err(Error::Checkpoint(format!("expected one network, found {}", other.len()))),
            }
        };
        Ok(match kind {
            BaselineKind::None => Self::None,
            BaselineKind::Oracle => Self::Oracle,
            BaselineKind::State => {
                let params = single()?;
                let optimizer = AdamState::new(params.len(), config.value_lr);
                Self::State { params, optimizer }
            }
            BaselineKind::Meta => Self::Meta(MetaBaseline::new(single()?, config.inner_lr, config.inner_steps, config.outer_lr)),
            BaselineKind::Multi => Self::Multi(MultiValue::from_parts(ckpt.sequence_ids.clone(), ckpt.networks.clone(), config.value_lr)?),
        })
    }
}
