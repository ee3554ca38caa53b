use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use idbaseline::envs::EnvConfig;
use idbaseline::trainer::TEST_ID_BASE;

use crate::{CliError, ConfigArgs};

#[derive(Args, Debug)]
pub struct GenInputsArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of sequences.
    #[arg(long)]
    pub count: usize,
    /// Output directory; files are named `<id>.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Write held-out sequences (ids from 1000000) instead of training ones (ids from 0).
    #[arg(long)]
    pub test: bool,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: GenInputsArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve()?;
    let base = if args.test { TEST_ID_BASE } else { 0 };
    let ids: Vec<u64> = (0..args.count as u64).map(|i| base + i).collect();
    let paths: Vec<PathBuf> = ids.iter().map(|id| args.out.join(format!("{id}.csv"))).collect();
    if !args.force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "{} exists (use --force to overwrite)",
                p.display()
            )));
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (id, path) in ids.iter().zip(&paths) {
        let input = cfg.env.generate_input(*id, cfg.train.seed)?;
        fs::write(path, EnvConfig::input_to_csv(&input)).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} sequences to {}", ids.len(), args.out.display());
    Ok(())
}
