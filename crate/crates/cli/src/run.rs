//! Run directory layout:
//!
//! ```text
//! <run>/config.toml          resolved experiment config
//! <run>/metrics.jsonl        one record per iteration
//! <run>/eval.jsonl           periodic held-out evaluation
//! <run>/checkpoints/iter_NNNNNN/{policy,baseline}.ckpt
//! <run>/manifest.json        written at the end of the run
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use idbaseline::baselines::BaselineModel;
use idbaseline::config::ExperimentConfig;
use idbaseline::nn::{read_checkpoint, write_checkpoint, Checkpoint, MlpParams};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POLICY_FILE: &str = "policy.ckpt";
pub const BASELINE_FILE: &str = "baseline.ckpt";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalSummary {
    pub iterations: u64,
    pub last_mean_return: Option<f64>,
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config: ExperimentConfig,
    pub summary: FinalSummary,
    /// Checkpoint directories relative to the run directory, oldest first.
    pub checkpoints: Vec<String>,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes via a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn checkpoint_dir_name(iteration: u64) -> String {
    format!("checkpoints/iter_{iteration:06}")
}

pub fn save_checkpoint(run: &Path, iteration: u64, policy: &MlpParams, baseline: &BaselineModel) -> anyhow::Result<String> {
    let rel = checkpoint_dir_name(iteration);
    let dir = run.join(&rel);
    fs::create_dir_all(&dir)?;
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &Checkpoint::single("mlp", policy.clone()))?;
    write_atomic(&dir.join(POLICY_FILE), &buf)?;
    buf.clear();
    write_checkpoint(&mut buf, &baseline.to_checkpoint())?;
    write_atomic(&dir.join(BASELINE_FILE), &buf)?;
    Ok(rel)
}

pub fn load_checkpoint_file(path: &Path) -> anyhow::Result<Checkpoint> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_checkpoint(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn load_policy(path: &Path) -> anyhow::Result<MlpParams> {
    let ckpt = load_checkpoint_file(path)?;
    match ckpt.networks.as_slice() {
        [p] => Ok(p.clone()),
        other => bail!("{}: expected one policy network, found {}", path.display(), other.len()),
    }
}

/// `checkpoint` if given, else the latest checkpoint directory under `run`.
pub fn find_checkpoint(run: &Path, checkpoint: Option<&Path>) -> anyhow::Result<PathBuf> {
    if let Some(c) = checkpoint {
        return Ok(c.to_path_buf());
    }
    let dir = run.join("checkpoints");
    let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(POLICY_FILE).exists())
        .collect();
    entries.sort();
    match entries.pop() {
        Some(p) => Ok(p),
        None => bail!("no checkpoints in {}", dir.display()),
    }
}

/// `--out`, else `$IDBASELINE_OUTPUT/<name>`, else `<config.output_dir>/<name>`.
pub fn run_dir(out: Option<&Path>, name: &str, config: &ExperimentConfig) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    match std::env::var_os(crate::OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(name),
        _ => config.output_dir.join(name),
    }
}
