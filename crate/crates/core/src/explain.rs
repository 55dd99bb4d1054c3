//! Mask learners: the deletion and preservation games, their shared
//! objective, and the gradient/occlusion saliency baselines.
//!
//! The objective minimized over masks `m` in `[0,1]` is
//!
//! ```text
//! lambda1 * L1(m) + lambda2 * TV(m) + sign * mean_jitter f(perturb(x0; M))
//! ```
//!
//! where the deletion game uses `L1 = sum(1 - m)` and `sign = +1` (pay to
//! delete, drive the score down) and the preservation game uses
//! `L1 = sum(m)` and `sign = -1` (pay to keep, drive the score up). With
//! `robust` set, the variable mask lives on a coarse grid and reaches image
//! resolution through a blurred upsampling `M = upsample(m)`, and the input
//! is jittered by a random integer translation each step; both discourage
//! adversarial pixel artifacts. Regularizers apply to the variable mask at
//! its native resolution.
//!
//! `f` is the summed model score over `target_class` plus `extra_classes`,
//! and all gradients are exact analytic chains through the model, the
//! perturbation, and the upsampling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::blackbox::BlackBox;
use crate::error::{Error, Result};
use crate::eval::NormalizedScore;
use crate::grid::{Grid, Heatmap, Image, Mask};
use crate::perturb::{PerturbSpec, PreparedPerturb};
use crate::rng::Rng;
use crate::tv;
use crate::upsample::MaskUpsampler;

pub const DEFAULT_LAMBDA1: f64 = 1e-4;
pub const DEFAULT_LAMBDA2: f64 = 1e-2;
pub const DEFAULT_BETA: f64 = 3.0;
pub const DEFAULT_JITTER_TAU: usize = 4;
pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_ITERS: usize = 300;
pub const DEFAULT_UPSAMPLE_SCALE: usize = 8;
pub const DEFAULT_MASK_BLUR_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Game {
    /// Find the smallest region whose removal destroys the score.
    Deletion,
    /// Find the smallest region whose presence sustains the score.
    Preservation,
}

impl Game {
    /// Sign applied to the model term so both games are minimizations.
    fn score_sign(self) -> f64 {
        match self {
            Game::Deletion => 1.0,
            Game::Preservation => -1.0,
        }
    }
}

/// What to optimize: game, regularizer weights, classes, and robustness.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub game: Game,
    /// Weight of the mask-area term.
    pub lambda1: f64,
    /// Weight of the total-variation term.
    pub lambda2: f64,
    /// Total-variation exponent, > 1.
    pub beta: f64,
    pub target_class: usize,
    /// Extra classes whose scores are summed into the model term.
    pub extra_classes: Vec<usize>,
    /// Integer jitter translations are drawn uniformly from `[0, jitter_tau)`
    /// per axis; 0 disables jitter.
    pub jitter_tau: usize,
    /// Monte Carlo samples of the jitter expectation per optimizer step.
    pub jitter_samples_per_step: usize,
    /// When set, the mask is optimized on a coarse grid and upsampled;
    /// when clear, the mask must already have image resolution.
    pub robust: bool,
}

impl ObjectiveConfig {
    pub fn new(game: Game, target_class: usize) -> Self {
        ObjectiveConfig {
            game,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            beta: DEFAULT_BETA,
            target_class,
            extra_classes: Vec::new(),
            jitter_tau: DEFAULT_JITTER_TAU,
            jitter_samples_per_step: 1,
            robust: true,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !self.beta.is_finite() || self.beta <= 1.0 {
            return Err(Error::UnsupportedExponent(self.beta));
        }
        if self.jitter_samples_per_step == 0 {
            return Err(Error::InvalidParameter(String::from(
                "jitter_samples_per_step must be at least 1",
            )));
        }
        Ok(())
    }
}

/// How to optimize: step size, iteration count, mask geometry, Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub iters: usize,
    /// Variable-mask dims. 0 derives the dim from the image: `ceil(dim /
    /// upsample_scale)` for robust objectives, the image dim otherwise.
    pub mask_h: usize,
    pub mask_w: usize,
    pub upsample_scale: usize,
    /// Blur of the mask upsampling, in output pixels.
    pub mask_blur_sigma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: DEFAULT_LR,
            iters: DEFAULT_ITERS,
            mask_h: 0,
            mask_w: 0,
            upsample_scale: DEFAULT_UPSAMPLE_SCALE,
            mask_blur_sigma: DEFAULT_MASK_BLUR_SIGMA,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl OptimConfig {
    fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::InvalidParameter(format!("lr must be positive, got {}", self.lr)));
        }
        if self.upsample_scale == 0 {
            return Err(Error::InvalidParameter(String::from("upsample_scale must be >= 1")));
        }
        if !self.mask_blur_sigma.is_finite() || self.mask_blur_sigma < 0.0 {
            return Err(Error::InvalidParameter(String::from(
                "mask_blur_sigma must be finite and nonnegative",
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !b.is_finite() || !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1)")));
            }
        }
        if !self.adam_eps.is_finite() || self.adam_eps <= 0.0 {
            return Err(Error::InvalidParameter(String::from("adam_eps must be positive")));
        }
        Ok(())
    }

    /// Variable-mask dims for an image, honoring explicit values and deriving
    /// zeros from the geometry.
    pub fn resolved_mask_dims(&self, image_h: usize, image_w: usize, robust: bool) -> (usize, usize) {
        let derive = |dim: usize| {
            if robust {
                dim.div_ceil(self.upsample_scale)
            } else {
                dim
            }
        };
        let h = if self.mask_h > 0 { self.mask_h } else { derive(image_h) };
        let w = if self.mask_w > 0 { self.mask_w } else { derive(image_w) };
        (h, w)
    }
}

/// Adam moment buffers for one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Grid,
    second_moment: Grid,
    step: usize,
}

impl AdamState {
    pub fn new(height: usize, width: usize) -> Self {
        AdamState {
            first_moment: Grid::zeros(height, width),
            second_moment: Grid::zeros(height, width),
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// One bias-corrected Adam descent step followed by a clamp onto `[0, 1]`.
pub fn adam_step(state: &mut AdamState, m: &Mask, grad: &Grid, opt: &OptimConfig) -> Result<Mask> {
    let same = m.height() == grad.height()
        && m.width() == grad.width()
        && m.height() == state.first_moment.height()
        && m.width() == state.first_moment.width();
    if !same {
        return Err(Error::ShapeMismatch(String::from(
            "mask, gradient, and Adam state must share one shape",
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(opt.adam_beta1, t);
    let bc2 = 1.0 - libm::pow(opt.adam_beta2, t);
    let mut data = vec![0.0; m.data().len()];
    for (i, out) in data.iter_mut().enumerate() {
        let g = grad.data()[i];
        let m1 = opt.adam_beta1 * state.first_moment.data()[i] + (1.0 - opt.adam_beta1) * g;
        let m2 = opt.adam_beta2 * state.second_moment.data()[i] + (1.0 - opt.adam_beta2) * g * g;
        state.first_moment.data_mut()[i] = m1;
        state.second_moment.data_mut()[i] = m2;
        let update = opt.lr * (m1 / bc1) / (libm::sqrt(m2 / bc2) + opt.adam_eps);
        *out = (m.data()[i] - update).clamp(0.0, 1.0);
    }
    Ok(Mask::new(m.height(), m.width(), data).expect("clamped values are in range"))
}

/// One objective evaluation: the value, its exact gradient with respect to
/// the variable mask, and the unweighted components.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Grid,
    /// Area term before its weight: `sum(1 - m)` or `sum(m)` by game.
    pub l1: f64,
    /// Total-variation energy before its weight.
    pub tv: f64,
    /// Mean model score over the jitter samples, sign not applied.
    pub score: f64,
}

/// Reusable objective evaluator for one (model, image) pair. Keeps one
/// prepared perturbation per distinct jitter shift, so blur pyramids are
/// built at most `jitter_tau^2` times however long the optimization runs.
pub struct MaskObjective<'a> {
    model: &'a dyn BlackBox,
    spec: PerturbSpec,
    x0: Image,
    cfg: ObjectiveConfig,
    upsampler: Option<MaskUpsampler>,
    classes: Vec<usize>,
    mask_h: usize,
    mask_w: usize,
    prepared: BTreeMap<(usize, usize), PreparedPerturb>,
}

fn prepared_entry<'m>(
    map: &'m mut BTreeMap<(usize, usize), PreparedPerturb>,
    spec: &PerturbSpec,
    x0: &Image,
    dy: usize,
    dx: usize,
) -> Result<&'m PreparedPerturb> {
    if !map.contains_key(&(dy, dx)) {
        let shifted = x0.shift(dy as isize, dx as isize);
        map.insert((dy, dx), PreparedPerturb::new(spec, &shifted)?);
    }
    Ok(map.get(&(dy, dx)).expect("present after insert"))
}

fn class_score(scores: &[f64], class: usize) -> Result<f64> {
    scores.get(class).copied().ok_or(Error::InvalidClass { class, num_classes: scores.len() })
}

impl<'a> MaskObjective<'a> {
    pub fn new(
        model: &'a dyn BlackBox,
        spec: &PerturbSpec,
        x0: &Image,
        cfg: &ObjectiveConfig,
        opt: &OptimConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        opt.validate()?;
        let shape = model.input_shape();
        if !shape.matches(x0) {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{}x{} does not match the model input {}x{}x{}",
                x0.height(),
                x0.width(),
                x0.channels(),
                shape.height,
                shape.width,
                shape.channels
            )));
        }
        let mut classes = vec![cfg.target_class];
        classes.extend_from_slice(&cfg.extra_classes);
        for &c in &classes {
            if c >= model.num_classes() {
                return Err(Error::InvalidClass { class: c, num_classes: model.num_classes() });
            }
        }
        let (mask_h, mask_w) = opt.resolved_mask_dims(x0.height(), x0.width(), cfg.robust);
        let upsampler = if cfg.robust {
            Some(MaskUpsampler::new(
                mask_h,
                mask_w,
                opt.upsample_scale,
                opt.mask_blur_sigma,
                x0.height(),
                x0.width(),
            )?)
        } else {
            if mask_h != x0.height() || mask_w != x0.width() {
                return Err(Error::ShapeMismatch(format!(
                    "non-robust objectives need a full-resolution mask; got {}x{} for a {}x{} image",
                    mask_h,
                    mask_w,
                    x0.height(),
                    x0.width()
                )));
            }
            None
        };
        Ok(MaskObjective {
            model,
            spec: spec.clone(),
            x0: x0.clone(),
            cfg: cfg.clone(),
            upsampler,
            classes,
            mask_h,
            mask_w,
            prepared: BTreeMap::new(),
        })
    }

    pub fn mask_dims(&self) -> (usize, usize) {
        (self.mask_h, self.mask_w)
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    fn check_variable_mask(&self, m: &Mask) -> Result<()> {
        if m.height() != self.mask_h || m.width() != self.mask_w {
            return Err(Error::ShapeMismatch(format!(
                "variable mask {}x{} does not match the configured {}x{}",
                m.height(),
                m.width(),
                self.mask_h,
                self.mask_w
            )));
        }
        Ok(())
    }

    /// The variable mask at image resolution: upsampled when robust, copied
    /// through otherwise.
    pub fn to_image_resolution(&self, m: &Mask) -> Result<Mask> {
        self.check_variable_mask(m)?;
        match &self.upsampler {
            Some(up) => up.forward(m),
            None => Ok(m.clone()),
        }
    }

    fn summed_score(&self, scores: &[f64]) -> Result<f64> {
        let mut f = 0.0;
        for &c in &self.classes {
            f += class_score(scores, c)?;
        }
        if !f.is_finite() {
            return Err(Error::ModelFailure(format!("model produced a non-finite score {f}")));
        }
        Ok(f)
    }

    /// Score of the perturbed image under this mask, unjittered.
    pub fn unjittered_score(&mut self, m: &Mask) -> Result<f64> {
        let m_big = self.to_image_resolution(m)?;
        let prep = prepared_entry(&mut self.prepared, &self.spec, &self.x0, 0, 0)?;
        let perturbed = prep.apply(&m_big)?;
        let scores = self.model.score(&perturbed)?;
        self.summed_score(&scores)
    }

    /// `(p0, pb)`: scores of the original and the fully perturbed image.
    pub fn reference_scores(&mut self) -> Result<(f64, f64)> {
        let p0 = {
            let scores = self.model.score(&self.x0)?;
            self.summed_score(&scores)?
        };
        let prep = prepared_entry(&mut self.prepared, &self.spec, &self.x0, 0, 0)?;
        let fully = prep.fully_perturbed();
        let scores = self.model.score(&fully)?;
        Ok((p0, self.summed_score(&scores)?))
    }

    /// Objective value and gradient at `m`. Jitter draws advance `rng`; with
    /// `jitter_tau = 0` the evaluation is deterministic and `rng` is unused.
    pub fn evaluate(&mut self, m: &Mask, rng: &mut Rng) -> Result<Evaluation> {
        self.check_variable_mask(m)?;
        let sign = self.cfg.game.score_sign();
        let n = m.data().len() as f64;
        let (l1, dl1) = match self.cfg.game {
            Game::Deletion => (n - m.data().iter().sum::<f64>(), -1.0),
            Game::Preservation => (m.data().iter().sum::<f64>(), 1.0),
        };
        let tv_energy = tv::tv_energy(m, self.cfg.beta);
        let tv_grad = tv::tv_gradient(m, self.cfg.beta)?;

        let m_big = match &self.upsampler {
            Some(up) => up.forward(m)?,
            None => m.clone(),
        };
        let samples = self.cfg.jitter_samples_per_step;
        let mut score_sum = 0.0;
        let mut grad_big = Grid::zeros(self.x0.height(), self.x0.width());
        for _ in 0..samples {
            let (dy, dx) = if self.cfg.jitter_tau > 0 {
                (rng.below(self.cfg.jitter_tau), rng.below(self.cfg.jitter_tau))
            } else {
                (0, 0)
            };
            let prep = prepared_entry(&mut self.prepared, &self.spec, &self.x0, dy, dx)?;
            let perturbed = prep.apply(&m_big)?;
            let (scores, score_grad) = self.model.score_and_gradient_sum(&perturbed, &self.classes)?;
            let g = prep.apply_with_input_gradient(&m_big, &score_grad)?;
            score_sum += self.summed_score(&scores)?;
            grad_big.add_scaled(&g, 1.0);
        }
        let mean_score = score_sum / samples as f64;
        grad_big.scale(sign / samples as f64);

        let mut grad = match &self.upsampler {
            Some(up) => up.adjoint(&grad_big)?,
            None => grad_big,
        };
        for (i, g) in grad.data_mut().iter_mut().enumerate() {
            *g += self.cfg.lambda1 * dl1 + self.cfg.lambda2 * tv_grad.data()[i];
        }
        Ok(Evaluation {
            value: self.cfg.lambda1 * l1 + self.cfg.lambda2 * tv_energy + sign * mean_score,
            grad,
            l1,
            tv: tv_energy,
            score: mean_score,
        })
    }
}

/// One-shot objective evaluation; builds the evaluator, returns value and
/// gradient with respect to the variable mask.
pub fn objective(
    cfg: &ObjectiveConfig,
    model: &dyn BlackBox,
    spec: &PerturbSpec,
    x0: &Image,
    m: &Mask,
    opt: &OptimConfig,
    rng: &mut Rng,
) -> Result<(f64, Grid)> {
    let mut obj = MaskObjective::new(model, spec, x0, cfg, opt)?;
    let e = obj.evaluate(m, rng)?;
    Ok((e.value, e.grad))
}

/// Smallest centered disk moving the score 99% of the way from the original
/// toward the fully perturbed value. Scans integer radii on the variable-mask
/// grid; deletion zeroes the disk, preservation keeps only the disk. Returns
/// the all-zero mask when no radius qualifies or the two reference scores
/// coincide.
fn init_on(obj: &mut MaskObjective) -> Result<Mask> {
    let (h, w) = obj.mask_dims();
    let (p0, pb) = obj.reference_scores()?;
    if (p0 - pb).abs() < 1e-12 {
        return Ok(Mask::zeros(h, w));
    }
    let game = obj.config().game;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let r_max = libm::ceil(libm::sqrt((h * h + w * w) as f64)) as usize;
    for r in 0..=r_max {
        let r2 = (r * r) as f64;
        let mut data = vec![0.0; h * w];
        for (p, v) in data.iter_mut().enumerate() {
            let y = (p / w) as f64;
            let x = (p % w) as f64;
            let inside = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r2;
            *v = match game {
                Game::Deletion => {
                    if inside {
                        0.0
                    } else {
                        1.0
                    }
                }
                Game::Preservation => {
                    if inside {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
        let candidate = Mask::new(h, w, data).expect("disk values are binary");
        let p = obj.unjittered_score(&candidate)?;
        let reached = match game {
            Game::Deletion => p <= p0 - 0.99 * (p0 - pb),
            Game::Preservation => p >= pb + 0.99 * (p0 - pb),
        };
        if reached {
            return Ok(candidate);
        }
    }
    Ok(Mask::zeros(h, w))
}

/// See [`init_on`]; builds the evaluator from parts.
pub fn init_circular_mask(
    model: &dyn BlackBox,
    spec: &PerturbSpec,
    x0: &Image,
    cfg: &ObjectiveConfig,
    opt: &OptimConfig,
) -> Result<Mask> {
    let mut obj = MaskObjective::new(model, spec, x0, cfg, opt)?;
    init_on(&mut obj)
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub objective: f64,
    pub l1: f64,
    pub tv: f64,
    pub score: f64,
}

/// Everything a mask optimization produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainResult {
    /// The learned variable mask (coarse when robust).
    pub mask: Mask,
    /// The mask at image resolution.
    pub upsampled_mask: Mask,
    /// Deletion: `1 - upsampled_mask`; preservation: the upsampled mask.
    pub saliency: Heatmap,
    /// Objective at initialization and after every step; `iters + 1` rows.
    pub objective_trace: Vec<TraceEntry>,
    /// Unjittered scores of the original, masked, and fully perturbed image.
    pub final_scores: NormalizedScore,
}

/// Runs the full pipeline: circular-disk initialization, `iters` Adam steps
/// on the objective with post-step clamping, then unjittered scoring of the
/// result. Deterministic given the seed and configs.
pub fn learn_mask(
    model: &dyn BlackBox,
    spec: &PerturbSpec,
    x0: &Image,
    cfg: &ObjectiveConfig,
    opt: &OptimConfig,
) -> Result<ExplainResult> {
    let mut obj = MaskObjective::new(model, spec, x0, cfg, opt)?;
    let mut rng = Rng::new(opt.seed);
    let mut m = init_on(&mut obj)?;
    let mut adam = AdamState::new(m.height(), m.width());
    let mut trace = Vec::with_capacity(opt.iters + 1);
    for iter in 0..=opt.iters {
        let e = obj.evaluate(&m, &mut rng)?;
        if !e.value.is_finite() {
            return Err(Error::NumericFailure(format!(
                "objective became non-finite at iteration {iter}"
            )));
        }
        trace.push(TraceEntry { iter, objective: e.value, l1: e.l1, tv: e.tv, score: e.score });
        if iter < opt.iters {
            m = adam_step(&mut adam, &m, &e.grad, opt)?;
        }
    }
    let upsampled_mask = obj.to_image_resolution(&m)?;
    let (p0, pb) = obj.reference_scores()?;
    let p_masked = obj.unjittered_score(&m)?;
    let saliency_data: Vec<f64> = match cfg.game {
        Game::Deletion => upsampled_mask.data().iter().map(|v| 1.0 - v).collect(),
        Game::Preservation => upsampled_mask.data().to_vec(),
    };
    let saliency = Heatmap::new(upsampled_mask.height(), upsampled_mask.width(), saliency_data)
        .expect("mask complement stays in range");
    Ok(ExplainResult {
        mask: m,
        upsampled_mask,
        saliency,
        objective_trace: trace,
        final_scores: NormalizedScore::compute(p_masked, p0, pb),
    })
}

fn channel_abs_max(g: &Image) -> Heatmap {
    let c = g.channels();
    let data: Vec<f64> = g
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
        .collect();
    Heatmap::new(g.height(), g.width(), data).expect("absolute values are valid heatmap entries")
}

/// Saliency from the raw score gradient: per-pixel max of `|df/dx|` over
/// channels.
pub fn gradient_saliency(model: &dyn BlackBox, x0: &Image, class: usize) -> Result<Heatmap> {
    Ok(channel_abs_max(&model.gradient(x0, class)?))
}

/// Saliency from the gradient-input product: per-pixel max of `|df/dx * x|`
/// over channels.
pub fn gradient_times_input(model: &dyn BlackBox, x0: &Image, class: usize) -> Result<Heatmap> {
    let mut g = model.gradient(x0, class)?;
    for (gv, xv) in g.data_mut().iter_mut().zip(x0.data()) {
        *gv *= xv;
    }
    Ok(channel_abs_max(&g))
}

fn window_positions(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = extent - window;
    let mut positions: Vec<usize> = (0..=last).step_by(stride).collect();
    if *positions.last().expect("range is nonempty") != last {
        positions.push(last);
    }
    positions
}

/// Occlusion saliency: slides a square window over the image, perturbs inside
/// it, and records the positive part of the score drop. Window placements
/// start at multiples of `stride` plus a final flush-to-edge placement; every
/// pixel's value is the mean drop over the placements covering it (0 when a
/// stride larger than the window leaves it uncovered).
pub fn occlusion_map(
    model: &dyn BlackBox,
    spec: &PerturbSpec,
    x0: &Image,
    class: usize,
    window: usize,
    stride: usize,
) -> Result<Heatmap> {
    let (h, w) = (x0.height(), x0.width());
    if window == 0 || stride == 0 {
        return Err(Error::InvalidParameter(String::from("window and stride must be >= 1")));
    }
    if window > h || window > w {
        return Err(Error::InvalidParameter(format!(
            "window {window} exceeds the {h}x{w} image"
        )));
    }
    let prep = PreparedPerturb::new(spec, x0)?;
    let p0 = class_score(&model.score(x0)?, class)?;
    let mut sums = vec![0.0; h * w];
    let mut counts = vec![0usize; h * w];
    for &wy in &window_positions(h, window, stride) {
        for &wx in &window_positions(w, window, stride) {
            let mut mask = Mask::ones(h, w);
            for y in wy..wy + window {
                for x in wx..wx + window {
                    mask.set(y, x, 0.0);
                }
            }
            let p = class_score(&model.score(&prep.apply(&mask)?)?, class)?;
            let drop = (p0 - p).max(0.0);
            for y in wy..wy + window {
                for x in wx..wx + window {
                    sums[y * w + x] += drop;
                    counts[y * w + x] += 1;
                }
            }
        }
    }
    let data = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Heatmap::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::{InputShape, LinearModel, RegionMeanModel, TinyCnn};
    use crate::eval::BoundingBox;

    fn region_model_16(gt: BoundingBox) -> (RegionMeanModel, Image) {
        let shape = InputShape { height: 16, width: 16, channels: 1 };
        let model = RegionMeanModel::from_boxes(shape, &[gt]).unwrap();
        let mut x0 = Image::zeros(16, 16, 1);
        for y in gt.y0..gt.y1 {
            for x in gt.x0..gt.x1 {
                x0.set(y, x, 0, 1.0);
            }
        }
        (model, x0)
    }

    fn plain_cfg(game: Game) -> ObjectiveConfig {
        let mut cfg = ObjectiveConfig::new(game, 0);
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        cfg.jitter_tau = 0;
        cfg.robust = false;
        cfg
    }

    fn full_res_opt() -> OptimConfig {
        OptimConfig { upsample_scale: 1, mask_blur_sigma: 0.0, ..OptimConfig::default() }
    }

    #[test]
    fn objective_with_everything_off_scores_the_original() {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let spec = PerturbSpec::constant(vec![0.0]);
        let cfg = plain_cfg(Game::Deletion);
        let mut rng = Rng::new(0);
        let m = Mask::ones(16, 16);
        let (value, _) =
            objective(&cfg, &model, &spec, &x0, &m, &full_res_opt(), &mut rng).unwrap();
        let p0 = model.score(&x0).unwrap()[0];
        assert!((value - p0).abs() < 1e-12);
    }

    #[test]
    fn deletion_l1_vanishes_on_the_full_mask() {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let spec = PerturbSpec::constant(vec![0.0]);
        let mut cfg = plain_cfg(Game::Deletion);
        cfg.lambda1 = 0.5;
        let mut obj = MaskObjective::new(&model, &spec, &x0, &cfg, &full_res_opt()).unwrap();
        let e = obj.evaluate(&Mask::ones(16, 16), &mut Rng::new(0)).unwrap();
        assert_eq!(e.l1, 0.0);
        let p0 = model.score(&x0).unwrap()[0];
        assert!((e.value - p0).abs() < 1e-12);

        cfg.game = Game::Preservation;
        let mut obj = MaskObjective::new(&model, &spec, &x0, &cfg, &full_res_opt()).unwrap();
        let e = obj.evaluate(&Mask::ones(16, 16), &mut Rng::new(0)).unwrap();
        assert_eq!(e.l1, 256.0);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        // The chain through model, perturbation, and upsampling is smooth at
        // the sampled points (blur kinks are dodged, models here are linear
        // in the input), so central differences are tight.
        let mut rng = Rng::new(2024);
        for kind in 0..3 {
            let tol = if kind == 2 { 1e-2 } else { 1e-4 };
            for instance in 0..25 {
                let channels = 1;
                let mu0 = vec![0.35];
                let spec = match kind {
                    0 => PerturbSpec::constant(mu0),
                    1 => PerturbSpec::noise(mu0, 0.25, 1000 + instance),
                    _ => PerturbSpec::blur(2.5),
                };
                let shape = InputShape { height: 8, width: 8, channels };
                let model: alloc::boxed::Box<dyn BlackBox> = if instance % 2 == 0 {
                    let gt = BoundingBox::new(2, 2, 6, 6);
                    alloc::boxed::Box::new(RegionMeanModel::from_boxes(shape, &[gt]).unwrap())
                } else {
                    alloc::boxed::Box::new(
                        TinyCnn::new_random(shape, 3, 90 + instance).unwrap(),
                    )
                };
                let x0 =
                    Image::new(8, 8, 1, (0..64).map(|_| rng.uniform()).collect()).unwrap();
                let mut cfg = ObjectiveConfig::new(
                    if instance % 2 == 0 { Game::Deletion } else { Game::Preservation },
                    0,
                );
                if instance % 3 == 0 && model.num_classes() > 1 {
                    cfg.extra_classes = vec![1];
                }
                cfg.lambda1 = 0.05;
                cfg.lambda2 = 0.01;
                cfg.beta = if instance % 2 == 0 { 2.0 } else { 3.0 };
                cfg.jitter_tau = 0;
                cfg.robust = true;
                let opt = OptimConfig {
                    mask_h: 4,
                    mask_w: 4,
                    upsample_scale: 2,
                    mask_blur_sigma: 1.0,
                    ..OptimConfig::default()
                };
                let mask_data: Vec<f64> = (0..16)
                    .map(|_| {
                        let v = rng.uniform_in(0.1, 0.9);
                        let nearest = (v * 8.0).round() / 8.0;
                        if (v - nearest).abs() < 0.02 { nearest + 0.03 } else { v }
                    })
                    .collect();
                let m = Mask::new(4, 4, mask_data).unwrap();

                let mut obj =
                    MaskObjective::new(model.as_ref(), &spec, &x0, &cfg, &opt).unwrap();
                let analytic = obj.evaluate(&m, &mut Rng::new(0)).unwrap();
                let h = 1e-5;
                let mut diff_sq = 0.0;
                let mut fd_sq = 0.0;
                for p in 0..16 {
                    let mut value_at = |mv: f64| -> f64 {
                        let mut data = m.data().to_vec();
                        data[p] = mv;
                        let probe = Mask::new(4, 4, data).unwrap();
                        obj.evaluate(&probe, &mut Rng::new(0)).unwrap().value
                    };
                    let fd = (value_at(m.data()[p] + h) - value_at(m.data()[p] - h)) / (2.0 * h);
                    diff_sq += (analytic.grad.data()[p] - fd) * (analytic.grad.data()[p] - fd);
                    fd_sq += fd * fd;
                }
                let rel = libm::sqrt(diff_sq) / libm::sqrt(fd_sq).max(1e-9);
                assert!(
                    rel < tol,
                    "kind {kind} instance {instance}: rel l2 error {rel}"
                );
            }
        }
    }

    #[test]
    fn init_falls_back_to_zeros_for_a_constant_model() {
        let weights = Image::zeros(8, 8, 1);
        let model = LinearModel::new(weights, 0.7).unwrap();
        let x0 = Image::constant(8, 8, 1, 0.5);
        let spec = PerturbSpec::constant(vec![0.0]);
        let cfg = plain_cfg(Game::Deletion);
        let m = init_circular_mask(&model, &spec, &x0, &cfg, &full_res_opt()).unwrap();
        assert!(m.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_matches_an_independent_radius_scan() {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let spec = PerturbSpec::constant(vec![0.0]);
        let cfg = plain_cfg(Game::Deletion);
        let got = init_circular_mask(&model, &spec, &x0, &cfg, &full_res_opt()).unwrap();

        // Oracle: rebuild every disk, score it directly, take the first
        // radius that moves the score 99% of the way to the fully perturbed
        // value. The region is 4x4 around the center, so this lands at the
        // smallest integer radius covering all 16 cells (r = 3 > 1.5*sqrt(2)).
        let p0 = model.score(&x0).unwrap()[0];
        let pb = 0.0;
        let mut expected = None;
        'scan: for r in 0..=23usize {
            let mut data = vec![0.0; 256];
            for (p, v) in data.iter_mut().enumerate() {
                let (y, x) = ((p / 16) as f64, (p % 16) as f64);
                let inside = (y - 7.5) * (y - 7.5) + (x - 7.5) * (x - 7.5) <= (r * r) as f64;
                *v = if inside { 0.0 } else { 1.0 };
            }
            let cand = Mask::new(16, 16, data).unwrap();
            let p = model
                .score(&crate::perturb::apply(&spec, &x0, &cand).unwrap())
                .unwrap()[0];
            if p <= p0 - 0.99 * (p0 - pb) {
                expected = Some((r, cand));
                break 'scan;
            }
        }
        let (r, cand) = expected.unwrap();
        assert_eq!(r, 3);
        assert_eq!(got.data(), cand.data());
    }

    #[test]
    fn preservation_init_keeps_the_smallest_sufficient_disk() {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let spec = PerturbSpec::constant(vec![0.0]);
        let cfg = plain_cfg(Game::Preservation);
        let got = init_circular_mask(&model, &spec, &x0, &cfg, &full_res_opt()).unwrap();
        // Same radius as the deletion case by symmetry, but ones inside.
        for (p, v) in got.data().iter().enumerate() {
            let (y, x) = ((p / 16) as f64, (p % 16) as f64);
            let inside = (y - 7.5) * (y - 7.5) + (x - 7.5) * (x - 7.5) <= 9.0;
            assert_eq!(*v, if inside { 1.0 } else { 0.0 }, "cell {p}");
        }
    }

    #[test]
    fn adam_ignores_zero_gradients_and_counts_steps() {
        let m = Mask::constant(2, 2, 0.4).unwrap();
        let mut state = AdamState::new(2, 2);
        let out = adam_step(&mut state, &m, &Grid::zeros(2, 2), &OptimConfig::default()).unwrap();
        assert_eq!(out.data(), m.data());
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_a_signed_learning_rate() {
        let m = Mask::constant(1, 1, 0.7).unwrap();
        let mut state = AdamState::new(1, 1);
        let grad = Grid::new(1, 1, vec![0.5]).unwrap();
        let out = adam_step(&mut state, &m, &grad, &OptimConfig::default()).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-6, "first step is ~lr * sign(grad)");
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut m = Mask::constant(1, 1, 0.9).unwrap();
        let mut state = AdamState::new(1, 1);
        let opt = OptimConfig { lr: 0.05, ..OptimConfig::default() };
        for _ in 0..200 {
            let grad = Grid::new(1, 1, vec![2.0 * (m.data()[0] - 0.3)]).unwrap();
            m = adam_step(&mut state, &m, &grad, &opt).unwrap();
        }
        assert!((m.data()[0] - 0.3).abs() < 1e-2);
    }

    #[test]
    fn adam_clamps_into_the_unit_interval() {
        let m = Mask::constant(1, 1, 0.05).unwrap();
        let mut state = AdamState::new(1, 1);
        let grad = Grid::new(1, 1, vec![3.0]).unwrap();
        let out = adam_step(&mut state, &m, &grad, &OptimConfig::default()).unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    fn region_recovery_setup() -> (RegionMeanModel, Image, ObjectiveConfig, OptimConfig) {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let mut cfg = ObjectiveConfig::new(Game::Deletion, 0);
        cfg.lambda1 = 0.05;
        cfg.lambda2 = 0.001;
        cfg.jitter_tau = 0;
        cfg.robust = false;
        let opt = full_res_opt();
        (model, x0, cfg, opt)
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let (model, x0, cfg, mut opt) = region_recovery_setup();
        opt.iters = 0;
        let spec = PerturbSpec::constant(vec![0.0]);
        let init = init_circular_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        let result = learn_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        assert_eq!(result.mask.data(), init.data());
        assert_eq!(result.objective_trace.len(), 1);
    }

    #[test]
    fn deletion_game_recovers_the_scoring_region() {
        let (model, x0, cfg, opt) = region_recovery_setup();
        let spec = PerturbSpec::constant(vec![0.0]);
        let result = learn_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        let gt = BoundingBox::new(6, 6, 10, 10);
        let mut region_low = 0;
        let mut background_high = 0;
        for p in 0..256 {
            let inside = gt.contains(p / 16, p % 16);
            let v = result.mask.data()[p];
            if inside && v < 0.5 {
                region_low += 1;
            }
            if !inside && v > 0.5 {
                background_high += 1;
            }
        }
        assert!(region_low * 4 >= 16 * 3, "mask deletes >= 75% of the region: {region_low}/16");
        assert!(
            background_high * 4 >= 240 * 3,
            "mask keeps >= 75% of the background: {background_high}/240"
        );
        assert!(result.final_scores.pprime <= -0.9, "score is suppressed");

        // Exhaustive box-mask oracle at 4x4 granularity: no axis-aligned box
        // deletion achieves a lower objective than the learned mask, up to a
        // small slack for the soft mask's TV cost.
        let mut obj = MaskObjective::new(&model, &spec, &x0, &cfg, &opt).unwrap();
        let learned = obj.evaluate(&result.mask, &mut Rng::new(0)).unwrap().value;
        let mut best_box = f64::INFINITY;
        for by in (0..=12).step_by(4) {
            for bx in (0..=12).step_by(4) {
                for bh in (4..=16 - by).step_by(4) {
                    for bw in (4..=16 - bx).step_by(4) {
                        let mut data = vec![1.0; 256];
                        for y in by..by + bh {
                            for x in bx..bx + bw {
                                data[y * 16 + x] = 0.0;
                            }
                        }
                        let cand = Mask::new(16, 16, data).unwrap();
                        let v = obj.evaluate(&cand, &mut Rng::new(0)).unwrap().value;
                        best_box = best_box.min(v);
                    }
                }
            }
        }
        assert!(
            learned <= best_box + 0.05,
            "learned objective {learned} beats every box mask (best {best_box})"
        );
    }

    #[test]
    fn deletion_trace_is_almost_monotone() {
        let (model, x0, cfg, opt) = region_recovery_setup();
        let spec = PerturbSpec::constant(vec![0.0]);
        let result = learn_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        assert_eq!(result.objective_trace.len(), opt.iters + 1);
        let mut increases = 0;
        for pair in result.objective_trace.windows(2) {
            if pair[1].objective > pair[0].objective + 1e-12 {
                increases += 1;
            }
        }
        assert!(
            increases * 20 <= opt.iters,
            "{increases} increases over {} steps exceeds 5%",
            opt.iters
        );
    }

    #[test]
    fn heavy_l1_drives_the_deletion_mask_to_ones() {
        let (model, x0, mut cfg, mut opt) = region_recovery_setup();
        cfg.lambda1 = 10.0;
        cfg.lambda2 = 0.0;
        opt.mask_h = 8;
        opt.mask_w = 8;
        opt.upsample_scale = 2;
        opt.mask_blur_sigma = 0.0;
        cfg.robust = true;
        let spec = PerturbSpec::constant(vec![0.0]);
        let result = learn_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        let l1: f64 = result.mask.data().iter().map(|v| 1.0 - v).sum();
        assert!(l1 < 0.01 * 64.0, "area term dominates, got l1 {l1}");
    }

    #[test]
    fn saliency_is_the_mask_complement_for_deletion() {
        let (model, x0, cfg, mut opt) = region_recovery_setup();
        opt.iters = 25;
        let spec = PerturbSpec::constant(vec![0.0]);
        let result = learn_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        for (s, m) in result.saliency.data().iter().zip(result.upsampled_mask.data()) {
            assert_eq!(*s, 1.0 - m);
        }
    }

    #[test]
    fn robust_objective_still_suppresses_the_region() {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let mut cfg = ObjectiveConfig::new(Game::Deletion, 0);
        cfg.lambda1 = 0.05;
        cfg.lambda2 = 0.001;
        cfg.jitter_tau = 0;
        let opt = OptimConfig {
            iters: 150,
            upsample_scale: 4,
            mask_blur_sigma: 2.0,
            ..OptimConfig::default()
        };
        let spec = PerturbSpec::constant(vec![0.0]);
        let result = learn_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        assert_eq!(result.mask.height(), 4);
        assert_eq!(result.upsampled_mask.height(), 16);
        assert!(
            result.final_scores.pprime <= -0.8,
            "robust run keeps the region suppressed, got {}",
            result.final_scores.pprime
        );
    }

    #[test]
    fn learn_mask_is_deterministic_with_jitter() {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let mut cfg = ObjectiveConfig::new(Game::Deletion, 0);
        cfg.lambda1 = 0.05;
        cfg.lambda2 = 0.001;
        cfg.jitter_tau = 2;
        let opt = OptimConfig {
            iters: 40,
            upsample_scale: 4,
            mask_blur_sigma: 2.0,
            seed: 17,
            ..OptimConfig::default()
        };
        let spec = PerturbSpec::constant(vec![0.0]);
        let a = learn_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        let b = learn_mask(&model, &spec, &x0, &cfg, &opt).unwrap();
        assert_eq!(a.mask.data(), b.mask.data());
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.final_scores, b.final_scores);
        assert_eq!(a.saliency.data(), b.saliency.data());
    }

    #[test]
    fn non_finite_model_scores_become_model_failures() {
        struct NanModel;
        impl BlackBox for NanModel {
            fn input_shape(&self) -> InputShape {
                InputShape { height: 4, width: 4, channels: 1 }
            }
            fn num_classes(&self) -> usize {
                1
            }
            fn score(&self, _x: &Image) -> Result<Vec<f64>> {
                Ok(vec![f64::NAN])
            }
            fn gradient(&self, _x: &Image, _class: usize) -> Result<Image> {
                Ok(Image::zeros(4, 4, 1))
            }
        }
        let spec = PerturbSpec::constant(vec![0.0]);
        let x0 = Image::zeros(4, 4, 1);
        let cfg = plain_cfg(Game::Deletion);
        let err = learn_mask(&NanModel, &spec, &x0, &cfg, &full_res_opt()).unwrap_err();
        assert!(matches!(err, Error::ModelFailure(_)), "got {err:?}");
    }

    #[test]
    fn objective_rejects_bad_configs() {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let spec = PerturbSpec::constant(vec![0.0]);
        let opt = full_res_opt();

        let mut cfg = plain_cfg(Game::Deletion);
        cfg.lambda1 = -0.1;
        assert!(MaskObjective::new(&model, &spec, &x0, &cfg, &opt).is_err());

        let mut cfg = plain_cfg(Game::Deletion);
        cfg.beta = 1.0;
        assert!(MaskObjective::new(&model, &spec, &x0, &cfg, &opt).is_err());

        let mut cfg = plain_cfg(Game::Deletion);
        cfg.target_class = 5;
        assert!(matches!(
            MaskObjective::new(&model, &spec, &x0, &cfg, &opt),
            Err(Error::InvalidClass { .. })
        ));

        // Non-robust objectives require a full-resolution mask.
        let mut cfg = plain_cfg(Game::Deletion);
        cfg.robust = false;
        let bad_opt = OptimConfig { mask_h: 4, mask_w: 4, ..full_res_opt() };
        assert!(MaskObjective::new(&model, &spec, &x0, &cfg, &bad_opt).is_err());

        let mut obj = MaskObjective::new(&model, &spec, &x0, &plain_cfg(Game::Deletion), &opt)
            .unwrap();
        assert!(obj.evaluate(&Mask::ones(4, 4), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn gradient_saliency_of_a_linear_model_is_the_weight_magnitude() {
        let mut rng = Rng::new(51);
        let weights =
            Image::new(4, 4, 1, (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
        let model = LinearModel::new(weights.clone(), 0.0).unwrap();
        for seed in [1, 2] {
            let mut r2 = Rng::new(seed);
            let x0 = Image::new(4, 4, 1, (0..16).map(|_| r2.uniform()).collect()).unwrap();
            let h = gradient_saliency(&model, &x0, 0).unwrap();
            for (hv, wv) in h.data().iter().zip(weights.data()) {
                assert_eq!(*hv, wv.abs());
            }
        }
    }

    #[test]
    fn gradient_saliency_of_a_region_model_is_the_region_indicator() {
        let (model, x0) = region_model_16(BoundingBox::new(6, 6, 10, 10));
        let h = gradient_saliency(&model, &x0, 0).unwrap();
        for p in 0..256 {
            let inside = BoundingBox::new(6, 6, 10, 10).contains(p / 16, p % 16);
            let expected = if inside { 1.0 / 16.0 } else { 0.0 };
            assert!((h.data()[p] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_saliency_matches_finite_differences_on_the_cnn() {
        // Seeds picked to keep the finite-difference stencil away from ReLU
        // and pooling kinks, where one-sided derivatives legitimately differ.
        let cnn =
            TinyCnn::new_random(InputShape { height: 8, width: 8, channels: 1 }, 3, 19).unwrap();
        let mut rng = Rng::new(12);
        let x0 = Image::new(8, 8, 1, (0..64).map(|_| rng.uniform()).collect()).unwrap();
        let h = gradient_saliency(&cnn, &x0, 1).unwrap();
        let step = 1e-4;
        for p in 0..64 {
            let probe = |v: f64| {
                let mut data = x0.data().to_vec();
                data[p] = v;
                cnn.score(&Image::new(8, 8, 1, data).unwrap()).unwrap()[1]
            };
            let fd = (probe(x0.data()[p] + step) - probe(x0.data()[p] - step)) / (2.0 * step);
            let expected = fd.abs();
            assert!(
                (h.data()[p] - expected).abs() <= 1e-3 * expected.abs().max(1.0),
                "pixel {p}: map {} fd {expected}",
                h.data()[p]
            );
        }
    }

    #[test]
    fn gradient_times_input_matches_the_linear_example_and_zero_input() {
        let mut rng = Rng::new(53);
        let weights =
            Image::new(4, 4, 1, (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap();
        let model = LinearModel::new(weights.clone(), 0.2).unwrap();
        let x0 = Image::new(4, 4, 1, (0..16).map(|_| rng.uniform()).collect()).unwrap();
        let h = gradient_times_input(&model, &x0, 0).unwrap();
        for p in 0..16 {
            assert!((h.data()[p] - (weights.data()[p] * x0.data()[p]).abs()).abs() < 1e-15);
        }
        let zero = gradient_times_input(&model, &Image::zeros(4, 4, 1), 0).unwrap();
        assert!(zero.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_times_input_is_the_product_of_the_parts() {
        let cnn =
            TinyCnn::new_random(InputShape { height: 8, width: 8, channels: 1 }, 3, 5).unwrap();
        let mut rng = Rng::new(55);
        let x0 = Image::new(8, 8, 1, (0..64).map(|_| rng.uniform()).collect()).unwrap();
        let gx = gradient_times_input(&cnn, &x0, 0).unwrap();
        let g = gradient_saliency(&cnn, &x0, 0).unwrap();
        for p in 0..64 {
            let expected = g.data()[p] * x0.data()[p].abs();
            assert!((gx.data()[p] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn occlusion_map_is_zero_for_a_constant_model() {
        let model = LinearModel::new(Image::zeros(8, 8, 1), 0.4).unwrap();
        let x0 = Image::constant(8, 8, 1, 0.6);
        let spec = PerturbSpec::constant(vec![0.0]);
        let h = occlusion_map(&model, &spec, &x0, 0, 4, 4).unwrap();
        assert!(h.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn occlusion_map_isolates_an_aligned_region() {
        let (model, x0) = region_model_16(BoundingBox::new(4, 4, 8, 8));
        let spec = PerturbSpec::constant(vec![0.0]);
        let h = occlusion_map(&model, &spec, &x0, 0, 4, 4).unwrap();
        for p in 0..256 {
            let inside = BoundingBox::new(4, 4, 8, 8).contains(p / 16, p % 16);
            let expected = if inside { 1.0 } else { 0.0 };
            assert!((h.data()[p] - expected).abs() < 1e-12, "pixel {p}");
        }
    }

    #[test]
    fn occlusion_map_matches_a_reference_loop() {
        let cnn =
            TinyCnn::new_random(InputShape { height: 16, width: 16, channels: 1 }, 3, 23).unwrap();
        let mut rng = Rng::new(57);
        let x0 = Image::new(16, 16, 1, (0..256).map(|_| rng.uniform()).collect()).unwrap();
        let spec = PerturbSpec::constant(vec![0.3]);
        let (window, stride) = (5, 3);
        let got = occlusion_map(&cnn, &spec, &x0, 1, window, stride).unwrap();

        // Reference: same documented placement rule, independent bookkeeping.
        let p0 = cnn.score(&x0).unwrap()[1];
        let positions = |extent: usize| -> Vec<usize> {
            let mut v: Vec<usize> = (0..=extent - window).step_by(stride).collect();
            if *v.last().unwrap() != extent - window {
                v.push(extent - window);
            }
            v
        };
        let (ys, xs) = (positions(16), positions(16));
        let mut sums = vec![0.0; 256];
        let mut counts = vec![0usize; 256];
        for &wy in &ys {
            for &wx in &xs {
                let mut data = vec![1.0; 256];
                for y in wy..wy + window {
                    for x in wx..wx + window {
                        data[y * 16 + x] = 0.0;
                    }
                }
                let mask = Mask::new(16, 16, data).unwrap();
                let occluded = crate::perturb::apply(&spec, &x0, &mask).unwrap();
                let drop = (p0 - cnn.score(&occluded).unwrap()[1]).max(0.0);
                for y in wy..wy + window {
                    for x in wx..wx + window {
                        sums[y * 16 + x] += drop;
                        counts[y * 16 + x] += 1;
                    }
                }
            }
        }
        for p in 0..256 {
            let expected = if counts[p] == 0 { 0.0 } else { sums[p] / counts[p] as f64 };
            assert!((got.data()[p] - expected).abs() < 1e-12);
        }
    }
}
