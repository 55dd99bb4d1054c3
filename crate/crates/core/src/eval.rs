//! Saliency evaluation protocols.
//!
//! Heatmaps are turned into binary kept-pixel masks by three thresholding
//! schemes, minimal boxes are fitted around the kept set, and localization is
//! scored by IOU against ground truth or by the pointing game. Score change
//! under perturbation is reported on the normalized `p'` scale, where 0 means
//! "unchanged" and -1 means "driven all the way to the fully perturbed
//! score". Soft masks can be sliced into binary deletion sets for scoring.
//!
//! Thresholds compare strictly (`>`), so a zero-mass or `alpha = 1` case
//! selects nothing, and argmax ties resolve to the first pixel in row-major
//! order; both choices keep every protocol deterministic.

use alloc::string::String;
use alloc::vec::Vec;

use crate::blackbox::BlackBox;
use crate::error::{Error, Result};
use crate::grid::{normalize_heatmap, Heatmap, Image, Mask};
use crate::kernel;
use crate::perturb::{PerturbSpec, PreparedPerturb};

/// Chebyshev distance within which a pointing-game maximum counts as a hit.
pub const DEFAULT_POINTING_TOLERANCE: usize = 15;

/// Suppression levels summarized by the smallest-box part of a deletion
/// curve: the box must reach `p' <= -level`.
pub const SUPPRESSION_LEVELS: [f64; 4] = [0.80, 0.90, 0.95, 0.99];

/// Axis-aligned pixel box: `x0/y0` inclusive, `x1/y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        debug_assert!(x1 > x0 && y1 > y0);
        BoundingBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }
}

/// Score triple with its normalized value `p' = (p - p0) / (p0 - pb)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedScore {
    /// Score of the masked image.
    pub p: f64,
    /// Score of the unperturbed image.
    pub p0: f64,
    /// Score of the fully perturbed image.
    pub pb: f64,
    pub pprime: f64,
}

impl NormalizedScore {
    pub fn compute(p: f64, p0: f64, pb: f64) -> Self {
        NormalizedScore { p, p0, pb, pprime: normalized_score(p, p0, pb) }
    }
}

/// One evaluation row for one image and method configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image_id: usize,
    pub method: String,
    pub alpha: f64,
    pub bbox: Option<BoundingBox>,
    /// Overlap with ground truth; 0 when `bbox` is absent.
    pub iou: f64,
    pub hit: bool,
    pub pprime: f64,
}

/// `(p - p0) / (p0 - pb)`, or 0 when the original and fully perturbed scores
/// coincide and the scale is meaningless.
pub fn normalized_score(p: f64, p0: f64, pb: f64) -> f64 {
    let gap = p0 - pb;
    if gap.abs() < 1e-12 {
        0.0
    } else {
        (p - p0) / gap
    }
}

fn kept_mask(h: usize, w: usize, keep: impl Fn(usize) -> bool) -> Mask {
    let mut m = Mask::zeros(h, w);
    for p in 0..h * w {
        if keep(p) {
            m.set(p / w, p % w, 1.0);
        }
    }
    m
}

/// Kept = pixels whose affinely normalized value exceeds `alpha`.
/// The returned mask flags kept (salient) pixels with 1.
pub fn value_threshold(h: &Heatmap, alpha: f64) -> Mask {
    let normalized = normalize_heatmap(h);
    kept_mask(h.height(), h.width(), |p| normalized.data()[p] > alpha)
}

/// Kept = the smallest nonempty prefix of pixels in descending value order
/// (row-major on ties) whose summed value reaches `alpha` times the total.
pub fn energy_threshold(h: &Heatmap, alpha: f64) -> Mask {
    let n = h.data().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        h.data()[b].partial_cmp(&h.data()[a]).expect("heatmap values are finite").then(a.cmp(&b))
    });
    let total: f64 = h.data().iter().sum();
    let mut kept = Mask::zeros(h.height(), h.width());
    let mut acc = 0.0;
    for &p in &order {
        acc += h.data()[p];
        kept.set(p / h.width(), p % h.width(), 1.0);
        if acc >= alpha * total {
            break;
        }
    }
    kept
}

/// Kept = pixels strictly above `alpha` times the mean intensity.
pub fn mean_threshold(h: &Heatmap, alpha: f64) -> Mask {
    let mean = h.data().iter().sum::<f64>() / h.data().len() as f64;
    kept_mask(h.height(), h.width(), |p| h.data()[p] > alpha * mean)
}

/// Minimal axis-aligned box covering every kept (value > 0.5) pixel, or
/// `None` when nothing is kept.
pub fn tightest_box(binary: &Mask) -> Option<BoundingBox> {
    let (mut ymin, mut ymax, mut xmin, mut xmax) = (usize::MAX, 0, usize::MAX, 0);
    let mut any = false;
    for y in 0..binary.height() {
        for x in 0..binary.width() {
            if binary.at(y, x) > 0.5 {
                any = true;
                ymin = ymin.min(y);
                ymax = ymax.max(y);
                xmin = xmin.min(x);
                xmax = xmax.max(x);
            }
        }
    }
    any.then(|| BoundingBox::new(xmin, ymin, xmax + 1, ymax + 1))
}

/// Intersection over union of two boxes; disjoint boxes score 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix0 = a.x0.max(b.x0);
    let iy0 = a.y0.max(b.y0);
    let ix1 = a.x1.min(b.x1);
    let iy1 = a.y1.min(b.y1);
    if ix1 <= ix0 || iy1 <= iy0 {
        return 0.0;
    }
    let inter = ((ix1 - ix0) * (iy1 - iy0)) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

/// Fraction of records counting as localization misses: a record misses when
/// its box is absent or overlaps ground truth with IOU <= 0.5 (the `iou`
/// field is trusted as already computed against ground truth).
pub fn localization_error(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput(String::from("no evaluation records")));
    }
    let misses =
        records.iter().filter(|r| r.bbox.is_none() || r.iou <= 0.5).count();
    Ok(misses as f64 / records.len() as f64)
}

/// First row-major argmax pixel of a heatmap as `(y, x)`.
pub fn argmax_pixel(h: &Heatmap) -> (usize, usize) {
    let mut best = 0;
    for (p, &v) in h.data().iter().enumerate() {
        if v > h.data()[best] {
            best = p;
        }
    }
    (best / h.width(), best % h.width())
}

/// Pointing game: hit iff the heatmap's (first row-major) maximum lies within
/// `tolerance` in Chebyshev distance of any ground-truth pixel (value > 0.5).
pub fn pointing(h: &Heatmap, gt_region: &Mask, tolerance: usize) -> Result<bool> {
    if h.height() != gt_region.height() || h.width() != gt_region.width() {
        return Err(Error::ShapeMismatch(String::from(
            "pointing needs the heatmap and ground truth on one raster",
        )));
    }
    let (my, mx) = argmax_pixel(h);
    for y in 0..gt_region.height() {
        for x in 0..gt_region.width() {
            if gt_region.at(y, x) > 0.5 {
                let dy = y.abs_diff(my);
                let dx = x.abs_diff(mx);
                if dy.max(dx) <= tolerance {
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

/// Deletion mask for a box: 0 (perturb) inside, 1 (keep) outside.
pub fn box_deletion_mask(height: usize, width: usize, bbox: &BoundingBox) -> Mask {
    let mut m = Mask::ones(height, width);
    for y in bbox.y0..bbox.y1.min(height) {
        for x in bbox.x0..bbox.x1.min(width) {
            m.set(y, x, 0.0);
        }
    }
    m
}

/// One threshold step of a deletion curve.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionPoint {
    pub alpha: f64,
    pub bbox: Option<BoundingBox>,
    /// Absent when the threshold keeps nothing and there is no box to delete.
    pub score: Option<NormalizedScore>,
}

/// Deletion curve plus its smallest-box summary, one entry per
/// [`SUPPRESSION_LEVELS`] level.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionCurve {
    pub points: Vec<DeletionPoint>,
    pub smallest_boxes: Vec<(f64, Option<BoundingBox>)>,
}

/// Sweeps value thresholds over a heatmap; at each one, fits the tightest box
/// around the kept pixels, deletes inside it, and reports the normalized
/// score. The summary picks, per suppression level, the smallest box whose
/// deletion reaches `p' <= -level`.
pub fn deletion_curve(
    model: &dyn BlackBox,
    spec: &PerturbSpec,
    x0: &Image,
    class: usize,
    h: &Heatmap,
    thresholds: &[f64],
) -> Result<DeletionCurve> {
    let prep = PreparedPerturb::new(spec, x0)?;
    let p0 = class_score(&model.score(x0)?, class)?;
    let pb = class_score(&model.score(&prep.fully_perturbed())?, class)?;
    let mut points = Vec::with_capacity(thresholds.len());
    for &alpha in thresholds {
        let bbox = tightest_box(&value_threshold(h, alpha));
        let score = match &bbox {
            Some(b) => {
                let masked = prep.apply(&box_deletion_mask(x0.height(), x0.width(), b))?;
                let p = class_score(&model.score(&masked)?, class)?;
                Some(NormalizedScore::compute(p, p0, pb))
            }
            None => None,
        };
        points.push(DeletionPoint { alpha, bbox, score });
    }
    let smallest_boxes = SUPPRESSION_LEVELS
        .iter()
        .map(|&level| {
            let mut best: Option<BoundingBox> = None;
            for pt in &points {
                if let (Some(b), Some(s)) = (&pt.bbox, &pt.score) {
                    if s.pprime <= -level && best.map_or(true, |prev| b.area() < prev.area()) {
                        best = Some(*b);
                    }
                }
            }
            (level, best)
        })
        .collect();
    Ok(DeletionCurve { points, smallest_boxes })
}

/// Simplifies a soft mask into binary deletion masks: blur it, then per alpha
/// delete wherever the smoothed deletion strength `1 - m` exceeds alpha. The
/// returned masks keep the perturbation convention (0 deletes, 1 preserves)
/// and follow the order of `alphas`.
pub fn slice_masks(m: &Mask, extra_blur_sigma: f64, alphas: &[f64]) -> Result<Vec<Mask>> {
    let smoothed = kernel::blur(&m.to_image(), extra_blur_sigma)?;
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let data = smoothed
                .data()
                .iter()
                .map(|&s| if 1.0 - s > alpha { 0.0 } else { 1.0 })
                .collect();
            Mask::new(m.height(), m.width(), data).expect("binary values are in range")
        })
        .collect())
}

fn class_score(scores: &[f64], class: usize) -> Result<f64> {
    scores
        .get(class)
        .copied()
        .ok_or(Error::InvalidClass { class, num_classes: scores.len() })
}
