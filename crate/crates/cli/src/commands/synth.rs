//! `synth`: generate a labeled shape corpus.

use std::path::{Path, PathBuf};

use clap::Args;
use maskexplain_core::blackbox::generate_shape_corpus;

use crate::config::ConfigMap;
use crate::corpusio;
use crate::error::{CliError, CliResult};

use super::ensure_out_dir;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of images to generate.
    #[arg(long)]
    pub n: usize,
    /// Seed for the corpus generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SynthArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(CliError::usage("--n must be at least 1"));
    }
    let mut cfg = ConfigMap::new();
    cfg.set("command", "synth");
    cfg.set("n", args.n);
    cfg.set("seed", args.seed);
    execute(&cfg, &args.out)
}

pub fn from_config(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    execute(cfg, out)
}

fn execute(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    let n: usize = cfg.parsed("n")?;
    let seed: u64 = cfg.parsed("seed")?;
    ensure_out_dir(out)?;
    cfg.write(&out.join("config.txt"))?;
    let corpus = generate_shape_corpus(n, seed)?;
    corpusio::write_corpus(out, &corpus)?;
    println!("wrote {} images to {}", corpus.len(), out.display());
    Ok(())
}
