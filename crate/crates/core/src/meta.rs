//! Explanations as testable rules about classifier behavior.
//!
//! Each rule is a predicate over (input, model) whose empirical failure
//! fraction measures how faithfully the rule describes the model:
//!
//! * Q1: the model's thresholded score agrees with class membership.
//! * Q2: the model's decision is invariant under exact grid rotations.
//! * Q3: the Q2 family indexed by a maximal angle; larger angles make the
//!   rule more informative, so selection picks the largest angle whose
//!   failure fraction stays within a tolerance.
//!
//! Score equality is restated as argmax equality: real-valued scores are
//! never exactly equal, so the decision is the testable quantity. Rotations
//! are restricted to multiples of 90 degrees; anything finer would measure
//! interpolation error, not the model.
//!
//! [`ridge_saliency`] closes the loop back to gradient saliency: fitting a
//! local linear rule by ridge regression on Gaussian perturbations recovers
//! a scaled version of the score gradient.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::blackbox::BlackBox;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::rng::Rng;

/// Largest input dimension (`height * width * channels`) the dense ridge
/// solve accepts.
pub const RIDGE_MAX_DIMENSION: usize = 256;

const VALID_ANGLES: [u32; 3] = [90, 180, 270];

/// One evaluation input with its class-membership label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Image,
    pub in_class: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleId {
    Q1,
    Q2,
    Q3,
}

/// Outcome of one faithfulness measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleReport {
    pub rule_id: RuleId,
    /// Fraction of evaluated predicate instances that failed, in `[0, 1]`.
    pub faithfulness_error: f64,
    /// Selected angle in degrees; present for Q3 only.
    pub theta: Option<u32>,
    /// Number of predicate instances the error is a fraction of.
    pub n: usize,
}

fn class_score(scores: &[f64], class: usize) -> Result<f64> {
    scores.get(class).copied().ok_or(Error::InvalidClass { class, num_classes: scores.len() })
}

fn argmax_class(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::ModelFailure(String::from("model returned no scores")));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::ModelFailure(format!("non-finite score {s} at class {i}")));
        }
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

fn validate_angles(model: &dyn BlackBox, angles: &[u32]) -> Result<()> {
    if angles.is_empty() {
        return Err(Error::InvalidInput(String::from("angle list must be nonempty")));
    }
    for &a in angles {
        if !VALID_ANGLES.contains(&a) {
            return Err(Error::InvalidParameter(format!(
                "angle {a} is not an exact grid rotation (90, 180, or 270)"
            )));
        }
    }
    let shape = model.input_shape();
    if shape.height != shape.width && angles.iter().any(|&a| a == 90 || a == 270) {
        return Err(Error::InvalidInput(String::from(
            "quarter-turn rotations need a square input raster",
        )));
    }
    Ok(())
}

/// Per-angle predicate failure counts for the rotation-invariance predicate:
/// argmax of `score(x)` equals argmax of `score(rotate(x))`.
fn rotation_failures(
    model: &dyn BlackBox,
    samples: &[Image],
    angles: &[u32],
) -> Result<Vec<usize>> {
    let mut failures = vec![0usize; angles.len()];
    for x in samples {
        let base = argmax_class(&model.score(x)?)?;
        for (i, &angle) in angles.iter().enumerate() {
            let rotated = x.rotate_quarter_turns(angle / 90)?;
            if argmax_class(&model.score(&rotated)?)? != base {
                failures[i] += 1;
            }
        }
    }
    Ok(failures)
}

/// Faithfulness of the classification rule: the thresholded class score
/// predicts membership. The error is the fraction of samples where
/// `score(x)[class] >= threshold` disagrees with the label.
pub fn faithfulness_q1(
    model: &dyn BlackBox,
    class: usize,
    threshold: f64,
    samples: &[LabeledSample],
) -> Result<RuleReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(String::from("sample list must be nonempty")));
    }
    if !threshold.is_finite() {
        return Err(Error::InvalidParameter(format!("threshold must be finite, got {threshold}")));
    }
    if class >= model.num_classes() {
        return Err(Error::InvalidClass { class, num_classes: model.num_classes() });
    }
    let mut failures = 0usize;
    for s in samples {
        let p = class_score(&model.score(&s.x)?, class)?;
        if (p >= threshold) != s.in_class {
            failures += 1;
        }
    }
    Ok(RuleReport {
        rule_id: RuleId::Q1,
        faithfulness_error: failures as f64 / samples.len() as f64,
        theta: None,
        n: samples.len(),
    })
}

/// Faithfulness of the rotation-invariance rule: the decision survives every
/// listed rotation. One predicate instance per (sample, angle) pair.
pub fn faithfulness_q2(
    model: &dyn BlackBox,
    samples: &[Image],
    angles: &[u32],
) -> Result<RuleReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(String::from("sample list must be nonempty")));
    }
    validate_angles(model, angles)?;
    let failures = rotation_failures(model, samples, angles)?;
    let n = samples.len() * angles.len();
    Ok(RuleReport {
        rule_id: RuleId::Q2,
        faithfulness_error: failures.iter().sum::<usize>() as f64 / n as f64,
        theta: None,
        n,
    })
}

/// Selects the largest angle theta from `angles` (ascending) such that the
/// rotation-invariance error at every listed angle up to theta stays within
/// `epsilon`; theta 0 (trivially satisfied, no instances) when even the
/// smallest angle fails. The report's error and count cover exactly the
/// (sample, angle) pairs the selected rule asserts, so error 0 over 0
/// instances accompanies theta 0.
pub fn max_theta_rule(
    model: &dyn BlackBox,
    samples: &[Image],
    angles: &[u32],
    epsilon: f64,
) -> Result<RuleReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(String::from("sample list must be nonempty")));
    }
    if !epsilon.is_finite() || !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if angles.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::InvalidParameter(String::from(
            "angles must be strictly ascending",
        )));
    }
    validate_angles(model, angles)?;
    let failures = rotation_failures(model, samples, angles)?;
    let per_sample = samples.len() as f64;
    let mut theta = 0u32;
    let mut covered_failures = 0usize;
    let mut covered = 0usize;
    for (i, &angle) in angles.iter().enumerate() {
        if failures[i] as f64 / per_sample > epsilon {
            break;
        }
        theta = angle;
        covered_failures += failures[i];
        covered += samples.len();
    }
    Ok(RuleReport {
        rule_id: RuleId::Q3,
        faithfulness_error: if covered == 0 {
            0.0
        } else {
            covered_failures as f64 / covered as f64
        },
        theta: Some(theta),
        n: covered,
    })
}

/// Sampling and regularization for the local linear fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeConfig {
    pub lambda: f64,
    /// Standard deviation of the Gaussian input perturbations.
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
}

impl RidgeConfig {
    fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter(String::from("sample count must be >= 1")));
        }
        Ok(())
    }
}

/// In-place Cholesky solve of `A w = b` for symmetric positive definite `A`
/// stored row-major. Fails on a non-positive pivot, which is how a singular
/// system (possible only with `lambda = 0` and too few samples) surfaces.
fn solve_symmetric_positive(a: &mut [f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut scale: f64 = 1.0;
    for k in 0..d {
        scale = scale.max(a[k * d + k].abs());
    }
    let tol = 1e-12 * scale;
    for k in 0..d {
        let mut diag = a[k * d + k];
        for j in 0..k {
            diag -= a[k * d + j] * a[k * d + j];
        }
        if !(diag > tol) {
            return Err(Error::NumericFailure(String::from(
                "ridge normal equations are numerically singular",
            )));
        }
        let l = libm::sqrt(diag);
        a[k * d + k] = l;
        for i in k + 1..d {
            let mut v = a[i * d + k];
            for j in 0..k {
                v -= a[i * d + j] * a[k * d + j];
            }
            a[i * d + k] = v / l;
        }
    }
    let mut y = b.to_vec();
    for i in 0..d {
        let mut v = y[i];
        for j in 0..i {
            v -= a[i * d + j] * y[j];
        }
        y[i] = v / a[i * d + i];
    }
    let mut w = y;
    for i in (0..d).rev() {
        let mut v = w[i];
        for j in i + 1..d {
            v -= a[j * d + i] * w[j];
        }
        w[i] = v / a[i * d + i];
    }
    Ok(w)
}

/// Fits the best local linear rule `f(x) ~ f(x0) + <w, x - x0>` by ridge
/// regression over Gaussian perturbations of `x0` and returns `w` with the
/// image's shape. Solves the normal equations
/// `(lambda I + mean[d d^T]) w = mean[d (f(x) - f(x0))]` exactly, so for a
/// linear model `w` converges to `sigma^2 / (lambda + sigma^2)` times the
/// gradient: saliency falls out of rule fitting.
pub fn ridge_saliency(
    model: &dyn BlackBox,
    x0: &Image,
    class: usize,
    cfg: &RidgeConfig,
) -> Result<Image> {
    cfg.validate()?;
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
    if class >= model.num_classes() {
        return Err(Error::InvalidClass { class, num_classes: model.num_classes() });
    }
    let d = shape.len();
    if d > RIDGE_MAX_DIMENSION {
        return Err(Error::InvalidInput(format!(
            "dense ridge solve supports inputs up to {RIDGE_MAX_DIMENSION} values, got {d}"
        )));
    }
    let f0 = class_score(&model.score(x0)?, class)?;
    let mut rng = Rng::new(cfg.seed);
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    let mut delta = vec![0.0; d];
    for _ in 0..cfg.n {
        for dv in delta.iter_mut() {
            *dv = cfg.sigma * rng.normal();
        }
        let mut xd = x0.data().to_vec();
        for (xv, dv) in xd.iter_mut().zip(&delta) {
            *xv += dv;
        }
        let x = Image::new(shape.height, shape.width, shape.channels, xd)?;
        let r = class_score(&model.score(&x)?, class)? - f0;
        for i in 0..d {
            b[i] += delta[i] * r;
            for j in i..d {
                a[i * d + j] += delta[i] * delta[j];
            }
        }
    }
    let inv_n = 1.0 / cfg.n as f64;
    for i in 0..d {
        b[i] *= inv_n;
        for j in i..d {
            a[i * d + j] *= inv_n;
        }
        a[i * d + i] += cfg.lambda;
    }
    for i in 0..d {
        for j in 0..i {
            a[i * d + j] = a[j * d + i];
        }
    }
    let w = solve_symmetric_positive(&mut a, &b, d)?;
    Image::new(shape.height, shape.width, shape.channels, w)
}
