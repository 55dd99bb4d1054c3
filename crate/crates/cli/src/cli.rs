//! Argument tree and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{evalcmd, explain, metacmd, saliency, synth, train};
use crate::config::ConfigMap;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "maskexplain",
    version,
    about = "Learn and evaluate perturbation-mask explanations of image classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic shape corpus.
    Synth(synth::SynthArgs),
    /// Train the small convolutional classifier on a corpus.
    Train(train::TrainArgs),
    /// Learn a perturbation mask explaining one prediction.
    Explain(explain::ExplainArgs),
    /// Compute gradient or occlusion saliency heatmaps.
    Saliency(saliency::SaliencyArgs),
    /// Score saved heatmaps against corpus ground truth.
    Eval(evalcmd::EvalArgs),
    /// Test simple rules about a model or fit a ridge saliency map.
    Meta(metacmd::MetaArgs),
    /// Replay a previous run's config.txt into a fresh directory.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// config.txt written by a previous run.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for the replay.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses the command line and runs the chosen command. Usage errors exit
/// with clap's own formatting before this returns.
pub fn run() -> CliResult<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Explain(a) => explain::run(a),
        Command::Saliency(a) => saliency::run(a),
        Command::Eval(a) => evalcmd::run(a),
        Command::Meta(a) => metacmd::run(a),
        Command::Rerun(a) => rerun(a),
    }
}

fn rerun(args: &RerunArgs) -> CliResult<()> {
    let cfg = ConfigMap::read(&args.config)?;
    match cfg.require("command")? {
        "synth" => synth::from_config(&cfg, &args.out),
        "train" => train::from_config(&cfg, &args.out),
        "explain" => explain::from_config(&cfg, &args.out),
        "saliency" => saliency::from_config(&cfg, &args.out),
        "eval" => evalcmd::from_config(&cfg, &args.out),
        "meta" => metacmd::from_config(&cfg, &args.out),
        other => Err(CliError::usage(format!("unknown command {other:?} in config"))),
    }
}
