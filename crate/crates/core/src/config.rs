//! Layered experiment configuration: an environment preset, a TOML file and
//! dotted `key=value` overrides, resolved into one validated [`ExperimentConfig`].
//!
//! ```toml
//! preset = "motivating2"
//! test_sequences = 100
//!
//! [env]                 # fields here override the preset
//! mean_interarrival = 150.0
//!
//! [train]
//! iterations = 2000
//!
//! [train.baseline]
//! kind = "multi"
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::envs::EnvConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: String,
    /// Fully resolved environment parameters.
    pub env: EnvConfig,
    pub train: TrainConfig,
    /// Held-out sequences for periodic and final evaluation.
    pub test_sequences: usize,
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Write a checkpoint every this many iterations; the final one is always written.
    pub checkpoint_every: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: "gridworld".into(),
            env: EnvConfig::preset("gridworld").expect("built-in preset"),
            train: TrainConfig::default(),
            test_sequences: 100,
            eval_every: 100,
            eval_episodes: 1,
            checkpoint_every: 0,
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses the right-hand side of an override as a TOML value, falling back to a
/// bare string.
pub fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c = value`, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies `key=value` strings in order.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        set_dotted(table, k.trim(), parse_override_value(v.trim()))?;
    }
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Resolves a raw table: the preset supplies every environment field and
    /// `[env]` overrides individual ones.
    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        let preset = match table.get("preset") {
            None => "gridworld".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let base = EnvConfig::preset(&preset)?;
        let mut env = match toml::Value::try_from(&base).map_err(config_err)? {
            toml::Value::Table(t) => t,
            _ => unreachable!("environment configs serialize to tables"),
        };
        if let Some(over) = table.remove("env") {
            let over = match over {
                toml::Value::Table(t) => t,
                other => return Err(Error::Config(format!("env must be a table, got {other}"))),
            };
            if let (Some(a), Some(b)) = (over.get("kind"), env.get("kind")) {
                if a != b {
                    return Err(Error::Config(format!("env.kind {a} does not match preset {preset:?} ({b})")));
                }
            }
            merge(&mut env, over);
        }
        table.insert("preset".into(), toml::Value::String(preset));
        table.insert("env".into(), toml::Value::Table(env));
        let cfg: Self = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        apply_overrides(&mut table, overrides)?;
        Self::from_table(table)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| Error::Config(format!("env: {e}")))?;
        self.train.validate()?;
        if self.test_sequences == 0 {
            return Err(Error::Config("test_sequences must be >= 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        if self.train.baseline.kind == BaselineKind::Oracle && !matches!(self.env, EnvConfig::Gridworld(_)) {
            return Err(Error::Config("the oracle baseline is only available on the gridworld preset".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn preset_with_field_override() {
        let c = ExperimentConfig::from_toml_str(
            "preset = \"motivating2\"\n[env]\nmean_interarrival = 150.0\n",
            &["train.baseline.kind=multi".into(), "train.lr=3e-4".into()],
        )
        .unwrap();
        match &c.env {
            EnvConfig::LoadBalance(lb) => {
                assert_eq!(lb.mean_interarrival, 150.0);
                assert_eq!(lb.server_rates.len(), 2);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(c.train.baseline.kind, BaselineKind::Multi);
        assert_eq!(c.train.lr, 3e-4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["lrr = 1", "[train]\nlearning_rate = 0.1", "[env]\nhorizn = 3", "[train.baseline]\nkk = 2"] {
            let e = ExperimentConfig::from_toml_str(text, &[]).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e}");
        }
        assert!(ExperimentConfig::from_toml_str("", &["train.baseline.kind=lstm".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["nokey".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[train]\nnum_workers = 12", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("preset = \"abr\"\n[train.baseline]\nkind = \"oracle\"", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("preset = \"mars\"", &[]).is_err());
    }

    #[test]
    fn serialized_config_round_trips() {
        for preset in crate::envs::PRESETS {
            let c = ExperimentConfig::from_toml_str(&format!("preset = \"{preset}\""), &["train.iterations=7".into()]).unwrap();
            let back = ExperimentConfig::from_toml_str(&c.to_toml().unwrap(), &[]).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn override_values_parse_as_toml() {
        assert_eq!(parse_override_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_override_value("[64, 32]").as_array().unwrap().len(), 2);
        assert_eq!(parse_override_value("state"), toml::Value::String("state".into()));
    }
}
