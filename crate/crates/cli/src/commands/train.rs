//! `train`: fit the small convolutional classifier on a shape corpus.

use std::path::{Path, PathBuf};

use clap::Args;
use maskexplain_core::blackbox::train_tiny_cnn;

use crate::config::ConfigMap;
use crate::corpusio;
use crate::csvio;
use crate::error::CliResult;
use crate::modelio;

use super::ensure_out_dir;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding the training corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Number of passes over the training set.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Seed for weight init and batch shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional held-out corpus scored after training.
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let mut cfg = ConfigMap::new();
    cfg.set("command", "train");
    cfg.set("corpus", args.corpus.display());
    cfg.set("epochs", args.epochs);
    cfg.set("lr", args.lr);
    cfg.set("seed", args.seed);
    if let Some(tc) = &args.test_corpus {
        cfg.set("test_corpus", tc.display());
    }
    execute(&cfg, &args.out)
}

pub fn from_config(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    execute(cfg, out)
}

fn execute(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    let corpus = corpusio::read_corpus(Path::new(cfg.require("corpus")?))?;
    let test = cfg
        .get("test_corpus")
        .map(|p| corpusio::read_corpus(Path::new(p)))
        .transpose()?;
    let epochs: usize = cfg.parsed("epochs")?;
    let lr: f64 = cfg.parsed("lr")?;
    let seed: u64 = cfg.parsed("seed")?;

    ensure_out_dir(out)?;
    cfg.write(&out.join("config.txt"))?;

    let outcome = train_tiny_cnn(&corpus, test.as_ref(), epochs, lr, seed)?;
    modelio::save_tiny_cnn(out, &outcome.model)?;

    let rows: Vec<String> = outcome
        .history
        .iter()
        .map(|e| format!("{},{},{}", e.epoch, e.mean_loss, e.train_accuracy))
        .collect();
    csvio::write_csv(&out.join("train_log.csv"), "epoch,mean_loss,train_accuracy", &rows)?;

    println!("train accuracy {:.4}", outcome.final_train_accuracy);
    if let Some(acc) = outcome.final_test_accuracy {
        println!("test accuracy {acc:.4}");
    }
    println!("saved model to {}", out.display());
    Ok(())
}
