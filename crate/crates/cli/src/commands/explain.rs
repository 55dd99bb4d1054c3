//! `explain`: learn a perturbation mask for one image and write the mask,
//! saliency, optimization trace, and resolved settings.

use std::path::{Path, PathBuf};

use clap::Args;
use maskexplain_core::explain::{self, Game, ObjectiveConfig, OptimConfig};
use maskexplain_core::grid::Image;
use maskexplain_core::perturb::{PerturbKind, PerturbSpec};

use crate::config::ConfigMap;
use crate::csvio;
use crate::error::{CliError, CliResult};
use crate::modelio;
use crate::mpt;
use crate::pgm;

use super::{ensure_out_dir, perturb_spec_for, resolve_class, GameArg, ImageSource, PerturbArg};

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Directory holding the model to explain.
    #[arg(long)]
    pub model: PathBuf,
    /// Input image as an MPT1 tensor (alternative to --corpus/--index).
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Corpus directory to pull the input from.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Index into the corpus.
    #[arg(long)]
    pub index: Option<usize>,
    /// Class to explain; defaults to the model's top class on the image.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, value_enum, default_value_t = GameArg::Deletion)]
    pub game: GameArg,
    #[arg(long, value_enum, default_value_t = PerturbArg::Constant)]
    pub perturb: PerturbArg,
    /// Weight of the mask-area term.
    #[arg(long, default_value_t = explain::DEFAULT_LAMBDA1)]
    pub lambda1: f64,
    /// Weight of the total-variation term.
    #[arg(long, default_value_t = explain::DEFAULT_LAMBDA2)]
    pub lambda2: f64,
    /// Total-variation exponent.
    #[arg(long, default_value_t = explain::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = explain::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = explain::DEFAULT_ITERS)]
    pub iters: usize,
    /// Mask upsampling factor.
    #[arg(long, default_value_t = explain::DEFAULT_UPSAMPLE_SCALE)]
    pub scale: usize,
    /// Blur of the mask upsampling, in output pixels.
    #[arg(long, default_value_t = explain::DEFAULT_MASK_BLUR_SIGMA)]
    pub mask_blur: f64,
    /// Jitter translations are drawn from [0, jitter) per axis; 0 disables.
    #[arg(long, default_value_t = explain::DEFAULT_JITTER_TAU)]
    pub jitter: usize,
    /// Seed for jitter draws and the noise perturbation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Swap which mask value means "blurred" under the blur perturbation.
    #[arg(long)]
    pub flip_blur_convention: bool,
    /// Sum the four next-best classes into the objective's model term.
    #[arg(long)]
    pub top5: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Classes with the highest scores, excluding `target`, best first.
fn runner_up_classes(scores: &[f64], target: usize, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&c| c != target).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.truncate(count);
    order
}

pub fn run(args: &ExplainArgs) -> CliResult<()> {
    let source = ImageSource::from_flags(
        args.image.as_deref(),
        args.corpus.as_deref(),
        args.index,
    )?;
    let model = modelio::load_model(&args.model)?;
    let x0 = source.load()?;
    let scores = model.as_blackbox().score(&x0)?;
    let class = resolve_class(model.as_blackbox(), &x0, args.class)?;

    let mut cfg = ConfigMap::new();
    cfg.set("command", "explain");
    cfg.set("model", args.model.display());
    source.record(&mut cfg);
    cfg.set("class", class);
    cfg.set("game", args.game);
    cfg.set("perturb", args.perturb);
    cfg.set("lambda1", args.lambda1);
    cfg.set("lambda2", args.lambda2);
    cfg.set("beta", args.beta);
    cfg.set("lr", args.lr);
    cfg.set("iters", args.iters);
    cfg.set("scale", args.scale);
    cfg.set("mask_blur", args.mask_blur);
    cfg.set("jitter", args.jitter);
    cfg.set("seed", args.seed);
    cfg.set("flip_blur_convention", args.flip_blur_convention);
    if args.top5 {
        let extras = runner_up_classes(&scores, class, 4);
        if !extras.is_empty() {
            let list: Vec<String> = extras.iter().map(|c| c.to_string()).collect();
            cfg.set("extra_classes", list.join(","));
        }
    }
    execute(&cfg, &args.out)
}

pub fn from_config(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    execute(cfg, out)
}

fn execute(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    let model = modelio::load_model(Path::new(cfg.require("model")?))?;
    let source = ImageSource::from_config(cfg)?;
    let x0 = source.load()?;

    let seed: u64 = cfg.parsed("seed")?;
    let perturb: PerturbArg = cfg.require("perturb")?.parse()?;
    let flip: bool = cfg.parsed("flip_blur_convention")?;
    let spec = perturb_spec_for(perturb, &x0, seed, flip);

    let game: GameArg = cfg.require("game")?.parse()?;
    let mut obj = ObjectiveConfig::new(game.to_game(), cfg.parsed("class")?);
    obj.lambda1 = cfg.parsed("lambda1")?;
    obj.lambda2 = cfg.parsed("lambda2")?;
    obj.beta = cfg.parsed("beta")?;
    obj.jitter_tau = cfg.parsed("jitter")?;
    if let Some(list) = cfg.get("extra_classes") {
        obj.extra_classes = list
            .split(',')
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| CliError::usage(format!("invalid extra_classes list {list:?}")))
            })
            .collect::<CliResult<Vec<usize>>>()?;
    }

    let mut opt = OptimConfig::default();
    opt.lr = cfg.parsed("lr")?;
    opt.iters = cfg.parsed("iters")?;
    opt.upsample_scale = cfg.parsed("scale")?;
    opt.mask_blur_sigma = cfg.parsed("mask_blur")?;
    opt.seed = seed;

    ensure_out_dir(out)?;
    cfg.write(&out.join("config.txt"))?;

    let result = explain::learn_mask(model.as_blackbox(), &spec, &x0, &obj, &opt)?;

    mpt::write_mask(&out.join("mask.mpt1"), &result.mask)?;
    mpt::write_mask(&out.join("upsampled_mask.mpt1"), &result.upsampled_mask)?;
    mpt::write_heatmap(&out.join("saliency.mpt1"), &result.saliency)?;
    pgm::write_pgm(&out.join("saliency.pgm"), &result.saliency)?;
    if let Some(index) = source.corpus_index() {
        mpt::write_heatmap(&out.join(format!("heatmap_{index}.mpt1")), &result.saliency)?;
    }

    let rows: Vec<String> = result
        .objective_trace
        .iter()
        .map(|t| format!("{},{},{},{},{}", t.iter, t.objective, t.l1, t.tv, t.score))
        .collect();
    csvio::write_csv(&out.join("trace.csv"), "iter,objective,l1,tv,score", &rows)?;

    write_meta(&out.join("meta.txt"), &obj, &opt, &spec, &x0, &result)?;

    println!(
        "class {} p0 {:.6} pb {:.6} p {:.6} pprime {:.6}",
        obj.target_class,
        result.final_scores.p0,
        result.final_scores.pb,
        result.final_scores.p,
        result.final_scores.pprime
    );
    Ok(())
}

/// Every resolved setting plus the final scores, as key=value lines.
fn write_meta(
    path: &Path,
    obj: &ObjectiveConfig,
    opt: &OptimConfig,
    spec: &PerturbSpec,
    x0: &Image,
    result: &explain::ExplainResult,
) -> CliResult<()> {
    let mut meta = ConfigMap::new();
    meta.set(
        "game",
        match obj.game {
            Game::Deletion => "deletion",
            Game::Preservation => "preservation",
        },
    );
    meta.set("target_class", obj.target_class);
    let extras: Vec<String> = obj.extra_classes.iter().map(|c| c.to_string()).collect();
    meta.set("extra_classes", extras.join(","));
    meta.set("lambda1", obj.lambda1);
    meta.set("lambda2", obj.lambda2);
    meta.set("beta", obj.beta);
    meta.set("jitter_tau", obj.jitter_tau);
    meta.set("jitter_samples_per_step", obj.jitter_samples_per_step);
    meta.set("robust", obj.robust);
    meta.set(
        "perturb",
        match spec.kind {
            PerturbKind::Constant => "constant",
            PerturbKind::Noise => "noise",
            PerturbKind::Blur => "blur",
        },
    );
    let mu0: Vec<String> = spec.mu0.iter().map(|v| v.to_string()).collect();
    meta.set("mu0", mu0.join(","));
    meta.set("sigma0", spec.sigma0);
    meta.set("noise_sigma", spec.noise_sigma);
    meta.set("noise_seed", spec.noise_seed);
    meta.set("flip_blur_convention", spec.flip_blur_convention);
    meta.set("lr", opt.lr);
    meta.set("iters", opt.iters);
    let (mh, mw) = opt.resolved_mask_dims(x0.height(), x0.width(), obj.robust);
    meta.set("mask_h", mh);
    meta.set("mask_w", mw);
    meta.set("upsample_scale", opt.upsample_scale);
    meta.set("mask_blur_sigma", opt.mask_blur_sigma);
    meta.set("adam_beta1", opt.adam_beta1);
    meta.set("adam_beta2", opt.adam_beta2);
    meta.set("adam_eps", opt.adam_eps);
    meta.set("seed", opt.seed);
    meta.set("p0", result.final_scores.p0);
    meta.set("pb", result.final_scores.pb);
    meta.set("p", result.final_scores.p);
    meta.set("pprime", result.final_scores.pprime);
    meta.write(path)
}
