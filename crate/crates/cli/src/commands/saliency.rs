//! `saliency`: reference heatmaps from gradients or occlusion.

use std::path::{Path, PathBuf};

use clap::Args;
use maskexplain_core::explain::{gradient_saliency, gradient_times_input, occlusion_map};

use crate::config::ConfigMap;
use crate::error::CliResult;
use crate::modelio;
use crate::mpt;
use crate::pgm;

use super::{ensure_out_dir, perturb_spec_for, resolve_class, ImageSource, MethodArg, PerturbArg};

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    /// Directory holding the model.
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
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Occlusion window side, in pixels.
    #[arg(long, default_value_t = 8)]
    pub window: usize,
    /// Occlusion window stride, in pixels.
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Perturbation applied inside the occlusion window.
    #[arg(long, value_enum, default_value_t = PerturbArg::Constant)]
    pub perturb: PerturbArg,
    /// Seed for the noise perturbation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SaliencyArgs) -> CliResult<()> {
    let source = ImageSource::from_flags(
        args.image.as_deref(),
        args.corpus.as_deref(),
        args.index,
    )?;
    let model = modelio::load_model(&args.model)?;
    let x0 = source.load()?;
    let class = resolve_class(model.as_blackbox(), &x0, args.class)?;

    let mut cfg = ConfigMap::new();
    cfg.set("command", "saliency");
    cfg.set("model", args.model.display());
    source.record(&mut cfg);
    cfg.set("class", class);
    cfg.set("method", args.method);
    if args.method == MethodArg::Occlusion {
        cfg.set("window", args.window);
        cfg.set("stride", args.stride);
        cfg.set("perturb", args.perturb);
        cfg.set("seed", args.seed);
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
    let class: usize = cfg.parsed("class")?;
    let method: MethodArg = cfg.require("method")?.parse()?;

    let heatmap = match method {
        MethodArg::Grad => gradient_saliency(model.as_blackbox(), &x0, class)?,
        MethodArg::Gradxinput => gradient_times_input(model.as_blackbox(), &x0, class)?,
        MethodArg::Occlusion => {
            let perturb: PerturbArg = cfg.require("perturb")?.parse()?;
            let seed: u64 = cfg.parsed("seed")?;
            let spec = perturb_spec_for(perturb, &x0, seed, false);
            occlusion_map(
                model.as_blackbox(),
                &spec,
                &x0,
                class,
                cfg.parsed("window")?,
                cfg.parsed("stride")?,
            )?
        }
    };

    ensure_out_dir(out)?;
    cfg.write(&out.join("config.txt"))?;
    mpt::write_heatmap(&out.join("saliency.mpt1"), &heatmap)?;
    pgm::write_pgm(&out.join("saliency.pgm"), &heatmap)?;
    if let Some(index) = source.corpus_index() {
        mpt::write_heatmap(&out.join(format!("heatmap_{index}.mpt1")), &heatmap)?;
    }
    println!("wrote {} saliency to {}", method, out.display());
    Ok(())
}
