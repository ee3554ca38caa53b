//! Input-driven environments and their input-process generators.

pub mod abr;
pub mod gridworld;
pub mod loadbalance;

use serde::{Deserialize, Serialize};

use crate::imdp::{InputDrivenEnv, InputSequence};
use crate::{Error, Result};

pub use abr::{AbrConfig, AbrEnv, BandwidthTrace};
pub use gridworld::{GridWorldConfig, GridWorldEnv};
pub use loadbalance::{LoadBalanceConfig, LoadBalanceEnv};

/// Environment selection plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Gridworld(GridWorldConfig),
    LoadBalance(LoadBalanceConfig),
    Abr(AbrConfig),
}

pub const PRESETS: &[&str] = &["gridworld", "motivating2", "loadbalance10", "abr"];

impl EnvConfig {
    /// Named presets: `gridworld`, `motivating2` (two identical servers),
    /// `loadbalance10` (ten heterogeneous servers) and `abr`.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "gridworld" => EnvConfig::Gridworld(GridWorldConfig::default()),
            "motivating2" => EnvConfig::LoadBalance(LoadBalanceConfig::motivating_two_server()),
            "loadbalance10" => EnvConfig::LoadBalance(LoadBalanceConfig::ten_server()),
            "abr" => EnvConfig::Abr(AbrConfig::default()),
            other => {
                return Err(Error::Config(format!(
                    "unknown environment preset {other:?} (known: {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Gridworld(c) => c.validate(),
            EnvConfig::LoadBalance(c) => c.validate(),
            EnvConfig::Abr(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn InputDrivenEnv>> {
        Ok(match self {
            EnvConfig::Gridworld(c) => Box::new(GridWorldEnv::new(c.clone())?),
            EnvConfig::LoadBalance(c) => Box::new(LoadBalanceEnv::new(c.clone())?),
            EnvConfig::Abr(c) => Box::new(AbrEnv::new(c.clone())?),
        })
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvConfig::Gridworld(c) => c.obs_dim(),
            EnvConfig::LoadBalance(c) => c.num_servers() + 1,
            EnvConfig::Abr(c) => c.obs_dim(),
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            EnvConfig::Gridworld(_) => 2,
            EnvConfig::LoadBalance(c) => c.num_servers(),
            EnvConfig::Abr(_) => abr::NUM_BITRATES,
        }
    }

    /// Upper bound on episode length.
    pub fn episode_len(&self) -> usize {
        match self {
            EnvConfig::Gridworld(c) => c.horizon,
            EnvConfig::LoadBalance(c) => c.num_jobs,
            EnvConfig::Abr(c) => c.num_chunks,
        }
    }

    /// Draws input sequence `id` as a pure function of `(id, seed)`.
    pub fn generate_input(&self, id: u64, seed: u64) -> Result<InputSequence> {
        match self {
            EnvConfig::Gridworld(c) => gridworld::gen_gridworld_inputs(c.horizon, c.input_persistence, id, seed),
            EnvConfig::LoadBalance(c) => loadbalance::gen_loadbalance_inputs(
                c.num_jobs,
                c.pareto_scale,
                c.pareto_shape,
                c.mean_interarrival,
                id,
                seed,
            ),
            EnvConfig::Abr(c) => BandwidthTrace::synthetic(&c.trace, id, seed)?.to_input_sequence(id),
        }
    }

    /// CSV body for one input sequence: grid `z`, load balance
    /// `interarrival,size`, ABR `time_seconds,bytes_per_second`.
    pub fn input_to_csv(input: &InputSequence) -> String {
        input
            .rows()
            .map(|r| {
                let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
                cells.join(",") + "\n"
            })
            .collect()
    }

    pub fn input_from_csv(&self, id: u64, text: &str) -> Result<InputSequence> {
        let dim = match self {
            EnvConfig::Gridworld(_) => 1,
            _ => 2,
        };
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            if row.len() != dim {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {dim} fields, got {}", row.len()),
                });
            }
            rows.push(row);
        }
        let seq = InputSequence::new(id, rows)?;
        if let EnvConfig::Abr(_) = self {
            BandwidthTrace::from_input_sequence(&seq)?;
        }
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build_and_generate() {
        for name in PRESETS {
            let cfg = EnvConfig::preset(name).unwrap();
            let mut env = cfg.build().unwrap();
            let input = cfg.generate_input(3, 9).unwrap();
            let obs = env.reset(&input).unwrap();
            assert_eq!(obs.values.len(), cfg.obs_dim());
            assert_eq!(env.num_actions(), cfg.num_actions());
            assert_eq!(input, cfg.generate_input(3, 9).unwrap());
            let back = cfg.input_from_csv(3, &EnvConfig::input_to_csv(&input)).unwrap();
            assert_eq!(back, input);
        }
        assert!(EnvConfig::preset("mujoco").is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let mut v = toml::Table::try_from(EnvConfig::preset("motivating2").unwrap()).unwrap();
        assert!(toml::Value::Table(v.clone()).try_into::<EnvConfig>().is_ok());
        v.insert("serverz".into(), toml::Value::Integer(3));
        assert!(toml::Value::Table(v).try_into::<EnvConfig>().is_err());
    }
}
