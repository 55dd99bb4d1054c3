//! `eval`: score saved heatmaps against corpus ground truth under the
//! localization, pointing, deletion, and slices protocols.

use std::path::{Path, PathBuf};

use clap::Args;
use maskexplain_core::blackbox::{BlackBox, ShapeCorpus};
use maskexplain_core::eval::{
    self, iou, tightest_box, BoundingBox, EvalRecord, NormalizedScore,
    DEFAULT_POINTING_TOLERANCE,
};
use maskexplain_core::grid::{normalize_heatmap, Heatmap, Image, Mask};
use maskexplain_core::perturb::PreparedPerturb;

use crate::config::ConfigMap;
use crate::corpusio;
use crate::csvio;
use crate::error::{CliError, CliResult};
use crate::modelio;
use crate::mpt;
use crate::parallel;

use super::{ensure_out_dir, parse_alpha_grid, perturb_spec_for, PerturbArg, ProtocolArg};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding the model.
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus directory providing images, labels, and ground-truth boxes.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory holding heatmap_<index>.mpt1 files to evaluate.
    #[arg(long)]
    pub heatmaps: PathBuf,
    #[arg(long, value_enum)]
    pub protocol: ProtocolArg,
    /// Threshold grid, "start:step:end" or a comma list.
    #[arg(long, default_value = "0:0.05:0.95")]
    pub alphas: String,
    /// Comma list drawn from value, energy, mean (localization only).
    #[arg(long, default_value = "value,energy,mean")]
    pub schemes: String,
    /// Pointing-game tolerance in pixels (Chebyshev).
    #[arg(long, default_value_t = DEFAULT_POINTING_TOLERANCE)]
    pub tolerance: usize,
    /// Method label written into the records.
    #[arg(long, default_value = "mask")]
    pub method_name: String,
    /// Perturbation used wherever a protocol deletes pixels.
    #[arg(long, value_enum, default_value_t = PerturbArg::Constant)]
    pub perturb: PerturbArg,
    /// Extra blur applied to soft masks before slicing.
    #[arg(long, default_value_t = 2.0)]
    pub extra_blur: f64,
    /// Base seed for the noise perturbation (offset by image index).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Value,
    Energy,
    Mean,
}

impl Scheme {
    fn as_str(self) -> &'static str {
        match self {
            Scheme::Value => "value",
            Scheme::Energy => "energy",
            Scheme::Mean => "mean",
        }
    }

    fn apply(self, h: &Heatmap, alpha: f64) -> Mask {
        match self {
            Scheme::Value => eval::value_threshold(h, alpha),
            Scheme::Energy => eval::energy_threshold(h, alpha),
            Scheme::Mean => eval::mean_threshold(h, alpha),
        }
    }
}

fn parse_schemes(s: &str) -> CliResult<Vec<Scheme>> {
    let schemes: Vec<Scheme> = s
        .split(',')
        .map(|t| match t.trim() {
            "value" => Ok(Scheme::Value),
            "energy" => Ok(Scheme::Energy),
            "mean" => Ok(Scheme::Mean),
            other => Err(CliError::usage(format!("unknown scheme {other:?}"))),
        })
        .collect::<CliResult<_>>()?;
    if schemes.is_empty() {
        return Err(CliError::usage("--schemes must name at least one scheme"));
    }
    Ok(schemes)
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let mut cfg = ConfigMap::new();
    cfg.set("command", "eval");
    cfg.set("model", args.model.display());
    cfg.set("corpus", args.corpus.display());
    cfg.set("heatmaps", args.heatmaps.display());
    cfg.set("protocol", args.protocol);
    cfg.set("alphas", &args.alphas);
    cfg.set("schemes", &args.schemes);
    cfg.set("tolerance", args.tolerance);
    cfg.set("method_name", &args.method_name);
    cfg.set("perturb", args.perturb);
    cfg.set("extra_blur", args.extra_blur);
    cfg.set("seed", args.seed);
    execute(&cfg, &args.out)
}

pub fn from_config(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    execute(cfg, out)
}

/// Ascending corpus indices that have a heatmap file.
fn heatmap_indices(dir: &Path, corpus_len: usize) -> CliResult<Vec<usize>> {
    let indices: Vec<usize> =
        (0..corpus_len).filter(|i| heatmap_path(dir, *i).is_file()).collect();
    if indices.is_empty() {
        return Err(CliError::runtime(format!(
            "no heatmap_<index>.mpt1 files in {} match the corpus",
            dir.display()
        )));
    }
    Ok(indices)
}

fn heatmap_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("heatmap_{index}.mpt1"))
}

struct ImageContext {
    x0: Image,
    heatmap: Heatmap,
    prep: PreparedPerturb,
    label: usize,
    gt: BoundingBox,
    p0: f64,
    pb: f64,
}

fn image_context(
    corpus: &ShapeCorpus,
    model: &dyn BlackBox,
    heatmaps: &Path,
    perturb: PerturbArg,
    seed: u64,
    i: usize,
) -> CliResult<ImageContext> {
    let x0 = corpus.image(i).clone();
    let heatmap = mpt::read_heatmap(&heatmap_path(heatmaps, i))?;
    if heatmap.height() != x0.height() || heatmap.width() != x0.width() {
        return Err(CliError::runtime(format!(
            "heatmap_{i} is {}x{} but the image is {}x{}",
            heatmap.height(),
            heatmap.width(),
            x0.height(),
            x0.width()
        )));
    }
    let spec = perturb_spec_for(perturb, &x0, seed.wrapping_add(i as u64), false);
    let prep = PreparedPerturb::new(&spec, &x0)?;
    let label = corpus.label(i);
    let p0 = model.score(&x0)?[label];
    let pb = model.score(&prep.fully_perturbed())?[label];
    Ok(ImageContext { x0, heatmap, prep, label, gt: corpus.bbox(i), p0, pb })
}

fn box_cells(bbox: &Option<BoundingBox>) -> String {
    match bbox {
        Some(b) => format!("{},{},{},{}", b.x0, b.y0, b.x1, b.y1),
        None => String::from(",,,"),
    }
}

fn record_row(r: &EvalRecord, scheme: &str) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.image_id,
        r.method,
        scheme,
        r.alpha,
        box_cells(&r.bbox),
        r.iou,
        u8::from(r.hit),
        r.pprime
    )
}

const RECORD_HEADER: &str = "image_id,method,scheme,alpha,x0,y0,x1,y1,iou,hit,pprime";

fn execute(cfg: &ConfigMap, out: &Path) -> CliResult<()> {
    let model = modelio::load_model(Path::new(cfg.require("model")?))?;
    let corpus = corpusio::read_corpus(Path::new(cfg.require("corpus")?))?;
    let heatmaps = PathBuf::from(cfg.require("heatmaps")?);
    let protocol: ProtocolArg = cfg.require("protocol")?.parse()?;
    let alphas = parse_alpha_grid(cfg.require("alphas")?)?;
    let tolerance: usize = cfg.parsed("tolerance")?;
    let method_name = cfg.require("method_name")?.to_string();
    let perturb: PerturbArg = cfg.require("perturb")?.parse()?;
    let extra_blur: f64 = cfg.parsed("extra_blur")?;
    let seed: u64 = cfg.parsed("seed")?;

    let indices = heatmap_indices(&heatmaps, corpus.len())?;
    ensure_out_dir(out)?;
    cfg.write(&out.join("config.txt"))?;

    let context = |i: usize| {
        image_context(&corpus, model.as_blackbox(), &heatmaps, perturb, seed, i)
    };

    match protocol {
        ProtocolArg::Localization => {
            let schemes = parse_schemes(cfg.require("schemes")?)?;
            // Per image: one record per (scheme, alpha), scheme-major.
            let per_image: Vec<Vec<EvalRecord>> = parallel::map_indexed(indices.len(), |pos| {
                let i = indices[pos];
                let ctx = context(i)?;
                let mut records = Vec::with_capacity(schemes.len() * alphas.len());
                for scheme in &schemes {
                    for &alpha in &alphas {
                        let bbox = tightest_box(&scheme.apply(&ctx.heatmap, alpha));
                        let (overlap, pprime) = match &bbox {
                            Some(b) => {
                                let deleted = ctx.prep.apply(&eval::box_deletion_mask(
                                    ctx.x0.height(),
                                    ctx.x0.width(),
                                    b,
                                ))?;
                                let p = model.as_blackbox().score(&deleted)?[ctx.label];
                                (
                                    iou(b, &ctx.gt),
                                    eval::normalized_score(p, ctx.p0, ctx.pb),
                                )
                            }
                            None => (0.0, 0.0),
                        };
                        records.push(EvalRecord {
                            image_id: i,
                            method: method_name.clone(),
                            alpha,
                            bbox,
                            iou: overlap,
                            hit: overlap > 0.5,
                            pprime,
                        });
                    }
                }
                Ok(records)
            })?;

            let mut rows = Vec::new();
            for records in &per_image {
                for (p, r) in records.iter().enumerate() {
                    rows.push(record_row(r, schemes[p / alphas.len()].as_str()));
                }
            }
            csvio::write_csv(&out.join("records.csv"), RECORD_HEADER, &rows)?;

            let mut summary = Vec::new();
            let mut best = Vec::new();
            for (s, scheme) in schemes.iter().enumerate() {
                let mut best_pair: Option<(f64, f64)> = None;
                for (a, &alpha) in alphas.iter().enumerate() {
                    let group: Vec<EvalRecord> = per_image
                        .iter()
                        .map(|records| records[s * alphas.len() + a].clone())
                        .collect();
                    let error = eval::localization_error(&group)?;
                    summary.push(format!(
                        "{},{},{},{}",
                        method_name,
                        scheme.as_str(),
                        alpha,
                        error
                    ));
                    if best_pair.is_none_or(|(_, e)| error < e) {
                        best_pair = Some((alpha, error));
                    }
                }
                let (alpha_star, error) = best_pair.expect("alpha grid is nonempty");
                best.push(format!("{},{},{},{}", method_name, scheme.as_str(), alpha_star, error));
                println!(
                    "{} {}: best localization error {:.4} at alpha {}",
                    method_name,
                    scheme.as_str(),
                    error,
                    alpha_star
                );
            }
            csvio::write_csv(&out.join("summary.csv"), "method,scheme,alpha,error", &summary)?;
            csvio::write_csv(&out.join("best.csv"), "method,scheme,alpha_star,error", &best)?;
        }
        ProtocolArg::Pointing => {
            let hits: Vec<EvalRecord> = parallel::map_indexed(indices.len(), |pos| {
                let i = indices[pos];
                let ctx = context(i)?;
                let mut gt_region = Mask::zeros(ctx.x0.height(), ctx.x0.width());
                for y in ctx.gt.y0..ctx.gt.y1 {
                    for x in ctx.gt.x0..ctx.gt.x1 {
                        gt_region.set(y, x, 1.0);
                    }
                }
                let hit = eval::pointing(&ctx.heatmap, &gt_region, tolerance)?;
                Ok(EvalRecord {
                    image_id: i,
                    method: method_name.clone(),
                    alpha: 0.0,
                    bbox: Some(ctx.gt),
                    iou: 0.0,
                    hit,
                    pprime: 0.0,
                })
            })?;
            let rows: Vec<String> = hits.iter().map(|r| record_row(r, "pointing")).collect();
            csvio::write_csv(&out.join("records.csv"), RECORD_HEADER, &rows)?;
            let precision =
                hits.iter().filter(|r| r.hit).count() as f64 / hits.len() as f64;
            let summary =
                vec![format!("{},pointing,0,{}", method_name, 1.0 - precision)];
            csvio::write_csv(&out.join("summary.csv"), "method,scheme,alpha,error", &summary)?;
            println!("{} pointing precision {:.4}", method_name, precision);
        }
        ProtocolArg::Deletion => {
            let curves = parallel::map_indexed(indices.len(), |pos| {
                let i = indices[pos];
                let ctx = context(i)?;
                let curve = eval::deletion_curve(
                    model.as_blackbox(),
                    ctx.prep.spec(),
                    &ctx.x0,
                    ctx.label,
                    &ctx.heatmap,
                    &alphas,
                )?;
                Ok((i, curve))
            })?;

            let mut point_rows = Vec::new();
            let mut box_rows = Vec::new();
            for (i, curve) in &curves {
                for pt in &curve.points {
                    let pprime = match &pt.score {
                        Some(s) => s.pprime.to_string(),
                        None => String::new(),
                    };
                    point_rows.push(format!(
                        "{},{},{},{}",
                        i,
                        pt.alpha,
                        box_cells(&pt.bbox),
                        pprime
                    ));
                }
                for (level, bbox) in &curve.smallest_boxes {
                    let area = bbox.map_or(0, |b| b.area());
                    box_rows.push(format!("{},{},{},{}", i, level, box_cells(bbox), area));
                }
            }
            csvio::write_csv(
                &out.join("deletion_points.csv"),
                "image_id,alpha,x0,y0,x1,y1,pprime",
                &point_rows,
            )?;
            csvio::write_csv(
                &out.join("deletion_boxes.csv"),
                "image_id,level,x0,y0,x1,y1,area",
                &box_rows,
            )?;
            println!(
                "deletion curves for {} images over {} thresholds",
                curves.len(),
                alphas.len()
            );
        }
        ProtocolArg::Slices => {
            let per_image: Vec<Vec<String>> = parallel::map_indexed(indices.len(), |pos| {
                let i = indices[pos];
                let ctx = context(i)?;
                // Salient pixels should be deleted: keep-mask = 1 - heatmap.
                let normalized = normalize_heatmap(&ctx.heatmap);
                let soft = Mask::new(
                    normalized.height(),
                    normalized.width(),
                    normalized.data().iter().map(|v| 1.0 - v).collect(),
                )?;
                let slices = eval::slice_masks(&soft, extra_blur, &alphas)?;
                let mut rows = Vec::with_capacity(slices.len());
                for (mask, &alpha) in slices.iter().zip(&alphas) {
                    let p = model.as_blackbox().score(&ctx.prep.apply(mask)?)?[ctx.label];
                    let score = NormalizedScore::compute(p, ctx.p0, ctx.pb);
                    rows.push(format!("{},{},{},{}", i, alpha, score.p, score.pprime));
                }
                Ok(rows)
            })?;
            let rows: Vec<String> = per_image.into_iter().flatten().collect();
            csvio::write_csv(&out.join("slices.csv"), "image_id,alpha,score,pprime", &rows)?;
            println!("sliced {} images over {} thresholds", indices.len(), alphas.len());
        }
    }
    Ok(())
}
