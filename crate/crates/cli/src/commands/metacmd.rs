//! `meta`: test simple rules about a model (threshold membership, rotation
//! invariance, its largest faithful angle) or fit a ridge saliency map.

use std::path::{Path, PathBuf};

use clap::Args;
use maskexplain_core::grid::{Heatmap, Image};
use maskexplain_core::meta::{self, LabeledSample, RidgeConfig, RuleReport};

use crate::config::ConfigMap;
use crate::corpusio;
use crate::csvio;
use crate::error::CliResult;
use crate::modelio;
use crate::mpt;
use crate::pgm;

use super::{ensure_out_dir, parse_angle_list, RuleArg};

#[derive(Debug, Args)]
pub struct MetaArgs {
    /// Directory holding the model.
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus of probe images (labels feed the q1 membership rule).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub rule: RuleArg,
    /// Class the rule or ridge fit is about.
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    /// Score threshold for the q1 membership rule.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Rotation angles, ascending, from 90/180/270.
    #[arg(long, default_value = "90,180,270")]
    pub angles: String,
    /// Per-angle error budget for the largest-angle rule.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Ridge regularizer weight.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Ridge probe noise scale.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Ridge probe count.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Corpus index of the image the ridge fit explains.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Seed for the ridge probes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &MetaArgs) -> CliResult<()> {
    let mut cfg = ConfigMap::new();
    cfg.set("command", "meta");
    cfg.set("model", args.model.display());
    cfg.set("corpus", args.corpus.display());
    cfg.set("rule", args.rule);
    match args.rule {
        RuleArg::Q1 => {
            cfg.set("class", args.class);
            cfg.set("threshold", args.threshold);
        }
        RuleArg::Q2 => {
            cfg.set("angles", &args.angles);
        }
        RuleArg::Q3 => {
            cfg.set("angles", &args.angles);
            cfg.set("epsilon", args.epsilon);
        }
        RuleArg::Ridge => {
            cfg.set("class", args.class);
            cfg.set("index", args.index);
            cfg.set("lambda", args.lambda);
            cfg.set("sigma", args.sigma);
            cfg.set("samples", args.samples);
            cfg.set("seed", args.seed);
        }
    }
    execute(&cfg, &args.out)
}

pub fn from_config(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    execute(cfg, out)
}

/// Per-pixel max of `|v|` over channels.
fn abs_channel_max(g: &Image) -> Heatmap {
    let c = g.channels();
    let data: Vec<f64> = g
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
        .collect();
    Heatmap::new(g.height(), g.width(), data).expect("absolute values are finite")
}

fn report_row(r: &RuleReport, rule: RuleArg, epsilon: Option<f64>) -> String {
    let theta = r.theta.map(|t| t.to_string()).unwrap_or_default();
    let eps = epsilon.map(|e| e.to_string()).unwrap_or_default();
    format!("{},{},{},{},{}", rule.as_str(), theta, eps, r.n, r.faithfulness_error)
}

fn execute(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    let model = modelio::load_model(Path::new(cfg.require("model")?))?;
    let corpus = corpusio::read_corpus(Path::new(cfg.require("corpus")?))?;
    let rule: RuleArg = cfg.require("rule")?.parse()?;

    ensure_out_dir(out)?;
    cfg.write(&out.join("config.txt"))?;

    match rule {
        RuleArg::Q1 => {
            let class: usize = cfg.parsed("class")?;
            let threshold: f64 = cfg.parsed("threshold")?;
            let samples: Vec<LabeledSample> = (0..corpus.len())
                .map(|i| LabeledSample {
                    x: corpus.image(i).clone(),
                    in_class: corpus.label(i) == class,
                })
                .collect();
            let report =
                meta::faithfulness_q1(model.as_blackbox(), class, threshold, &samples)?;
            write_report(out, &report, rule, None)?;
        }
        RuleArg::Q2 => {
            let angles = parse_angle_list(cfg.require("angles")?)?;
            let report =
                meta::faithfulness_q2(model.as_blackbox(), corpus.images(), &angles)?;
            write_report(out, &report, rule, None)?;
        }
        RuleArg::Q3 => {
            let angles = parse_angle_list(cfg.require("angles")?)?;
            let epsilon: f64 = cfg.parsed("epsilon")?;
            let report =
                meta::max_theta_rule(model.as_blackbox(), corpus.images(), &angles, epsilon)?;
            write_report(out, &report, rule, Some(epsilon))?;
        }
        RuleArg::Ridge => {
            let index: usize = cfg.parsed("index")?;
            if index >= corpus.len() {
                return Err(crate::error::CliError::usage(format!(
                    "--index {index} is out of range for a corpus of {}",
                    corpus.len()
                )));
            }
            let ridge = RidgeConfig {
                lambda: cfg.parsed("lambda")?,
                sigma: cfg.parsed("sigma")?,
                n: cfg.parsed("samples")?,
                seed: cfg.parsed("seed")?,
            };
            let w = meta::ridge_saliency(
                model.as_blackbox(),
                corpus.image(index),
                cfg.parsed("class")?,
                &ridge,
            )?;
            mpt::write_image(&out.join("ridge.mpt1"), &w)?;
            pgm::write_pgm(&out.join("ridge.pgm"), &abs_channel_max(&w))?;
            println!("ridge weights for image {index} written to {}", out.display());
        }
    }
    Ok(())
}

fn write_report(out: &Path, report: &RuleReport, rule: RuleArg, eps: Option<f64>) -> CliResult<()> {
    let rows = vec![report_row(report, rule, eps)];
    csvio::write_csv(&out.join("meta.csv"), "rule,theta,epsilon,n,error", &rows)?;
    match report.theta {
        Some(theta) => println!(
            "{}: theta {} error {:.4} over {} checks",
            rule.as_str(),
            theta,
            report.faithfulness_error,
            report.n
        ),
        None => println!(
            "{}: error {:.4} over {} checks",
            rule.as_str(),
            report.faithfulness_error,
            report.n
        ),
    }
    Ok(())
}
