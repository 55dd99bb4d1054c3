//! Mask-driven image perturbations.
//!
//! A mask value of 1 preserves the underlying pixel and 0 replaces it with
//! "uninformative" content; three flavors of replacement are supported:
//!
//! * `Constant`: blend toward a fixed per-channel color `mu0`.
//! * `Noise`: blend toward a Gaussian noise field centered on `mu0`,
//!   regenerated deterministically from `noise_seed`.
//! * `Blur`: per-pixel Gaussian blur with strength `sigma(u) = sigma0 *
//!   (1 - m(u))`, realized by linearly interpolating a precomputed pyramid of
//!   uniformly blurred copies.
//!
//! [`PreparedPerturb`] caches the per-image state (noise field, blur pyramid)
//! so an optimizer can re-apply many masks to one image cheaply. The
//! free functions build that state on every call and suit one-shot use.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};
use crate::kernel;
use crate::rng::Rng;

/// Number of blur pyramid steps; levels sit at `sigma0 * k / PYRAMID_LEVELS`
/// for `k = 0..=PYRAMID_LEVELS`, so the pyramid holds `PYRAMID_LEVELS + 1`
/// images and level 0 is the unblurred input.
pub const PYRAMID_LEVELS: usize = 8;

/// Default maximum blur standard deviation, in pixels.
pub const DEFAULT_SIGMA0: f64 = 10.0;

/// Default noise standard deviation for images with values in `[0, 1]`.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.2;

/// Stream tag separating the noise field from other users of the same seed.
const NOISE_STREAM_TAG: u64 = 0x6574_61; // "eta"

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbKind {
    Constant,
    Noise,
    Blur,
}

/// Full description of a perturbation operator. Construct via the
/// per-kind helpers and tweak fields as needed.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    /// Replacement color, one entry per image channel; also the center of the
    /// noise distribution. Ignored by the blur kind.
    pub mu0: Vec<f64>,
    /// Maximum blur standard deviation, in pixels.
    pub sigma0: f64,
    /// Standard deviation of the noise around `mu0`.
    pub noise_sigma: f64,
    /// The noise field is regenerated deterministically from this seed.
    pub noise_seed: u64,
    /// Swaps the blur orientation to `sigma(u) = sigma0 * m(u)`, so m = 1
    /// blurs fully instead of preserving. Exists to study the opposite
    /// convention; leave off for the standard games.
    pub flip_blur_convention: bool,
}

impl PerturbSpec {
    pub fn constant(mu0: Vec<f64>) -> Self {
        PerturbSpec {
            kind: PerturbKind::Constant,
            mu0,
            sigma0: DEFAULT_SIGMA0,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            noise_seed: 0,
            flip_blur_convention: false,
        }
    }

    pub fn noise(mu0: Vec<f64>, noise_sigma: f64, noise_seed: u64) -> Self {
        PerturbSpec {
            kind: PerturbKind::Noise,
            mu0,
            sigma0: DEFAULT_SIGMA0,
            noise_sigma,
            noise_seed,
            flip_blur_convention: false,
        }
    }

    pub fn blur(sigma0: f64) -> Self {
        PerturbSpec {
            kind: PerturbKind::Blur,
            mu0: Vec::new(),
            sigma0,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            noise_seed: 0,
            flip_blur_convention: false,
        }
    }

    fn validate_for(&self, image: &Image) -> Result<()> {
        if !self.sigma0.is_finite() || self.sigma0 < 0.0 {
            return Err(Error::InvalidParameter(String::from(
                "sigma0 must be finite and nonnegative",
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidParameter(String::from(
                "noise_sigma must be finite and nonnegative",
            )));
        }
        match self.kind {
            PerturbKind::Constant | PerturbKind::Noise => {
                if self.mu0.len() != image.channels() {
                    return Err(Error::ShapeMismatch(format!(
                        "mu0 has {} entries for a {}-channel image",
                        self.mu0.len(),
                        image.channels()
                    )));
                }
                if !self.mu0.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidParameter(String::from("mu0 must be finite")));
                }
            }
            PerturbKind::Blur => {}
        }
        Ok(())
    }
}

/// A perturbation operator bound to one image, with the expensive per-image
/// state (noise field, blur pyramid) built once up front.
#[derive(Debug, Clone)]
pub struct PreparedPerturb {
    spec: PerturbSpec,
    base: Image,
    /// Blur kind only: `PYRAMID_LEVELS + 1` progressively blurred copies.
    pyramid: Vec<Image>,
    /// Noise kind only: the fixed noise field eta.
    noise: Option<Image>,
}

impl PreparedPerturb {
    pub fn new(spec: &PerturbSpec, x0: &Image) -> Result<Self> {
        spec.validate_for(x0)?;
        let mut pyramid = Vec::new();
        let mut noise = None;
        match spec.kind {
            PerturbKind::Blur => {
                pyramid.reserve(PYRAMID_LEVELS + 1);
                pyramid.push(x0.clone());
                for k in 1..=PYRAMID_LEVELS {
                    let sigma = spec.sigma0 * k as f64 / PYRAMID_LEVELS as f64;
                    pyramid.push(kernel::blur(x0, sigma)?);
                }
            }
            PerturbKind::Noise => {
                let mut rng = Rng::derive(spec.noise_seed, NOISE_STREAM_TAG);
                let channels = x0.channels();
                let mut field = Image::zeros(x0.height(), x0.width(), channels);
                for (i, v) in field.data_mut().iter_mut().enumerate() {
                    *v = spec.mu0[i % channels] + spec.noise_sigma * rng.normal();
                }
                noise = Some(field);
            }
            PerturbKind::Constant => {}
        }
        Ok(PreparedPerturb { spec: spec.clone(), base: x0.clone(), pyramid, noise })
    }

    pub fn spec(&self) -> &PerturbSpec {
        &self.spec
    }

    pub fn base(&self) -> &Image {
        &self.base
    }

    fn check_mask(&self, m: &Mask) -> Result<()> {
        if m.height() != self.base.height() || m.width() != self.base.width() {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} does not cover image {}x{}",
                m.height(),
                m.width(),
                self.base.height(),
                self.base.width()
            )));
        }
        Ok(())
    }

    /// Pyramid position for one mask value: lower level index and the
    /// interpolation fraction toward the next level.
    #[inline]
    fn pyramid_pos(&self, mv: f64) -> (usize, f64) {
        let strength = if self.spec.flip_blur_convention { mv } else { 1.0 - mv };
        let t = PYRAMID_LEVELS as f64 * strength;
        let k = (t as usize).min(PYRAMID_LEVELS - 1);
        (k, t - k as f64)
    }

    /// Perturbed image for one mask. The mask must match the image spatially;
    /// each mask value applies to every channel of its pixel.
    pub fn apply(&self, m: &Mask) -> Result<Image> {
        self.check_mask(m)?;
        let (h, w, c) = (self.base.height(), self.base.width(), self.base.channels());
        let mut out = Image::zeros(h, w, c);
        match self.spec.kind {
            PerturbKind::Constant => {
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    let mv = m.data()[i / c];
                    *v = mv * self.base.data()[i] + (1.0 - mv) * self.spec.mu0[i % c];
                }
            }
            PerturbKind::Noise => {
                let eta = self.noise.as_ref().expect("noise kind carries a field");
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    let mv = m.data()[i / c];
                    *v = mv * self.base.data()[i] + (1.0 - mv) * eta.data()[i];
                }
            }
            PerturbKind::Blur => {
                for p in 0..h * w {
                    let (k, frac) = self.pyramid_pos(m.data()[p]);
                    let lo = self.pyramid[k].data();
                    let hi = self.pyramid[k + 1].data();
                    for i in p * c..(p + 1) * c {
                        out.data_mut()[i] = (1.0 - frac) * lo[i] + frac * hi[i];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradient of `<upstream, apply(m)>` with respect to the mask. The blur
    /// kind differentiates the pyramid blend, which is piecewise linear in m.
    pub fn apply_with_input_gradient(&self, m: &Mask, upstream: &Image) -> Result<Grid> {
        self.check_mask(m)?;
        if !upstream.same_shape(&self.base) {
            return Err(Error::ShapeMismatch(String::from(
                "upstream gradient does not match the image shape",
            )));
        }
        let (h, w, c) = (self.base.height(), self.base.width(), self.base.channels());
        let mut grad = Grid::zeros(h, w);
        match self.spec.kind {
            PerturbKind::Constant => {
                for p in 0..h * w {
                    let mut g = 0.0;
                    for ch in 0..c {
                        let i = p * c + ch;
                        g += upstream.data()[i] * (self.base.data()[i] - self.spec.mu0[ch]);
                    }
                    grad.data_mut()[p] = g;
                }
            }
            PerturbKind::Noise => {
                let eta = self.noise.as_ref().expect("noise kind carries a field");
                for p in 0..h * w {
                    let mut g = 0.0;
                    for i in p * c..(p + 1) * c {
                        g += upstream.data()[i] * (self.base.data()[i] - eta.data()[i]);
                    }
                    grad.data_mut()[p] = g;
                }
            }
            PerturbKind::Blur => {
                // d out / d m = (d t / d m) * (hi - lo) with t the pyramid
                // coordinate, so the slope sign follows the convention flag.
                let dt_dm = if self.spec.flip_blur_convention {
                    PYRAMID_LEVELS as f64
                } else {
                    -(PYRAMID_LEVELS as f64)
                };
                for p in 0..h * w {
                    let (k, _) = self.pyramid_pos(m.data()[p]);
                    let lo = self.pyramid[k].data();
                    let hi = self.pyramid[k + 1].data();
                    let mut g = 0.0;
                    for i in p * c..(p + 1) * c {
                        g += upstream.data()[i] * (hi[i] - lo[i]);
                    }
                    grad.data_mut()[p] = dt_dm * g;
                }
            }
        }
        Ok(grad)
    }

    /// The image with everything perturbed away (all-zero mask).
    pub fn fully_perturbed(&self) -> Image {
        let m = Mask::zeros(self.base.height(), self.base.width());
        self.apply(&m).expect("zero mask matches the image by construction")
    }
}

/// One-shot [`PreparedPerturb::apply`]; rebuilds per-image state every call.
pub fn apply(spec: &PerturbSpec, x0: &Image, m: &Mask) -> Result<Image> {
    PreparedPerturb::new(spec, x0)?.apply(m)
}

/// One-shot [`PreparedPerturb::apply_with_input_gradient`].
pub fn apply_with_input_gradient(
    spec: &PerturbSpec,
    x0: &Image,
    m: &Mask,
    upstream: &Image,
) -> Result<Grid> {
    PreparedPerturb::new(spec, x0)?.apply_with_input_gradient(m, upstream)
}

/// One-shot [`PreparedPerturb::fully_perturbed`]. Errors only on an invalid
/// spec, e.g. a `mu0` that does not match the channel count.
pub fn fully_perturbed(spec: &PerturbSpec, x0: &Image) -> Result<Image> {
    Ok(PreparedPerturb::new(spec, x0)?.fully_perturbed())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(rng: &mut Rng, h: usize, w: usize, c: usize) -> Image {
        let data = (0..h * w * c).map(|_| rng.uniform()).collect();
        Image::new(h, w, c, data).unwrap()
    }

    /// Mask entries in [0.05, 0.95], pushed at least 0.015 away from the blur
    /// pyramid kinks at multiples of 1/PYRAMID_LEVELS so central differences
    /// never straddle a slope change.
    fn random_kink_free_mask(rng: &mut Rng, h: usize, w: usize) -> Mask {
        let data = (0..h * w)
            .map(|_| {
                let v = rng.uniform_in(0.05, 0.95);
                let levels = PYRAMID_LEVELS as f64;
                let nearest = (v * levels).round() / levels;
                if (v - nearest).abs() < 0.015 {
                    (nearest + 0.02).clamp(0.05, 0.95)
                } else {
                    v
                }
            })
            .collect();
        Mask::new(h, w, data).unwrap()
    }

    fn all_specs(channels: usize) -> Vec<PerturbSpec> {
        let mu0: Vec<f64> = (0..channels).map(|ch| 0.2 + 0.3 * ch as f64).collect();
        vec![
            PerturbSpec::constant(mu0.clone()),
            PerturbSpec::noise(mu0, 0.2, 7),
            PerturbSpec::blur(2.0),
        ]
    }

    #[test]
    fn full_preservation_is_the_identity_for_every_kind() {
        let mut rng = Rng::new(11);
        let x0 = random_image(&mut rng, 8, 8, 2);
        let m = Mask::ones(8, 8);
        for spec in all_specs(2) {
            let out = apply(&spec, &x0, &m).unwrap();
            for (a, b) in out.data().iter().zip(x0.data()) {
                assert!((a - b).abs() <= 1e-6, "{:?} moved a preserved pixel", spec.kind);
            }
        }
    }

    #[test]
    fn constant_zero_mask_paints_the_fill_color() {
        let mut rng = Rng::new(3);
        let x0 = random_image(&mut rng, 4, 4, 2);
        let spec = PerturbSpec::constant(vec![0.5, 0.25]);
        let out = apply(&spec, &x0, &Mask::zeros(4, 4)).unwrap();
        for p in 0..16 {
            assert_eq!(out.data()[2 * p], 0.5);
            assert_eq!(out.data()[2 * p + 1], 0.25);
        }
    }

    #[test]
    fn constant_half_mask_blends_linearly() {
        let x0 = Image::constant(3, 3, 1, 1.0);
        let spec = PerturbSpec::constant(vec![0.5]);
        let m = Mask::constant(3, 3, 0.5).unwrap();
        let out = apply(&spec, &x0, &m).unwrap();
        for &v in out.data() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_zero_mask_matches_the_direct_blur() {
        let mut x0 = Image::zeros(32, 32, 1);
        x0.set(16, 16, 0, 1.0);
        let spec = PerturbSpec::blur(DEFAULT_SIGMA0);
        let out = apply(&spec, &x0, &Mask::zeros(32, 32)).unwrap();
        let oracle = kernel::blur(&x0, DEFAULT_SIGMA0).unwrap();
        for (a, b) in out.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() <= 5e-3);
        }
    }

    #[test]
    fn blur_half_mask_lands_on_an_interior_pyramid_level() {
        // m = 0.5 maps exactly onto the level blurred at sigma0 / 2.
        let mut rng = Rng::new(4);
        let x0 = random_image(&mut rng, 16, 16, 1);
        let spec = PerturbSpec::blur(6.0);
        let out = apply(&spec, &x0, &Mask::constant(16, 16, 0.5).unwrap()).unwrap();
        let oracle = kernel::blur(&x0, 3.0).unwrap();
        for (a, b) in out.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn fully_perturbed_matches_the_zero_mask_for_every_kind() {
        let mut rng = Rng::new(9);
        let x0 = random_image(&mut rng, 8, 8, 2);
        for spec in all_specs(2) {
            let a = fully_perturbed(&spec, &x0).unwrap();
            let b = apply(&spec, &x0, &Mask::zeros(8, 8)).unwrap();
            assert_eq!(a.data(), b.data());
        }
        let spec = PerturbSpec::constant(vec![0.5, 0.25]);
        let out = fully_perturbed(&spec, &x0).unwrap();
        assert!(out.data().chunks_exact(2).all(|px| px == [0.5, 0.25]));
    }

    #[test]
    fn noise_field_is_reproducible_bit_for_bit() {
        let mut rng = Rng::new(21);
        let x0 = random_image(&mut rng, 8, 8, 1);
        let m = random_kink_free_mask(&mut rng, 8, 8);
        let spec = PerturbSpec::noise(vec![0.4], 0.2, 99);
        let a = apply(&spec, &x0, &m).unwrap();
        let b = apply(&spec, &x0, &m).unwrap();
        assert_eq!(a.data(), b.data());
        let other = PerturbSpec::noise(vec![0.4], 0.2, 100);
        let c = apply(&other, &x0, &m).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn constant_gradient_vanishes_when_the_image_equals_the_fill() {
        let x0 = Image::constant(4, 4, 2, 0.5);
        let spec = PerturbSpec::constant(vec![0.5, 0.5]);
        let m = Mask::constant(4, 4, 0.3).unwrap();
        let up = Image::constant(4, 4, 2, 1.0);
        let g = apply_with_input_gradient(&spec, &x0, &m, &up).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_gradient_matches_the_scalar_example() {
        // 1x1 image, x0 = 1, mu0 = 0: output is m, so the gradient carries
        // the upstream weight 2 unchanged.
        let x0 = Image::constant(1, 1, 1, 1.0);
        let spec = PerturbSpec::constant(vec![0.0]);
        let m = Mask::constant(1, 1, 0.5).unwrap();
        let up = Image::constant(1, 1, 1, 2.0);
        let g = apply_with_input_gradient(&spec, &x0, &m, &up).unwrap();
        assert_eq!(g.data(), &[2.0]);
    }

    #[test]
    fn flipped_blur_reverses_the_mask_orientation() {
        let mut rng = Rng::new(5);
        let x0 = random_image(&mut rng, 12, 12, 1);
        let mut spec = PerturbSpec::blur(4.0);
        spec.flip_blur_convention = true;
        let keep = apply(&spec, &x0, &Mask::zeros(12, 12)).unwrap();
        assert_eq!(keep.data(), x0.data());
        let blurred = apply(&spec, &x0, &Mask::ones(12, 12)).unwrap();
        let oracle = kernel::blur(&x0, 4.0).unwrap();
        for (a, b) in blurred.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_kind() {
        // Constant and noise are linear in m and blur is piecewise linear
        // with kinks dodged by the mask sampler, so central differences are
        // exact up to rounding; the asserted bounds are far looser.
        let mut rng = Rng::new(71);
        for spec_idx in 0..3 {
            let tol = if spec_idx == 2 { 1e-2 } else { 1e-4 };
            for instance in 0..50 {
                let channels = 1 + (instance % 2);
                let spec = all_specs(channels).swap_remove(spec_idx);
                let x0 = random_image(&mut rng, 8, 8, channels);
                let m = random_kink_free_mask(&mut rng, 8, 8);
                let up_data = (0..64 * channels).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                let up = Image::new(8, 8, channels, up_data).unwrap();

                let prep = PreparedPerturb::new(&spec, &x0).unwrap();
                let analytic = prep.apply_with_input_gradient(&m, &up).unwrap();
                let h = 1e-4;
                for p in 0..64 {
                    let inner = |mask: &Mask| -> f64 {
                        let out = prep.apply(mask).unwrap();
                        out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
                    };
                    let mut plus = m.clone();
                    plus.set(p / 8, p % 8, m.data()[p] + h);
                    let mut minus = m.clone();
                    minus.set(p / 8, p % 8, m.data()[p] - h);
                    let fd = (inner(&plus) - inner(&minus)) / (2.0 * h);
                    let a = analytic.data()[p];
                    assert!(
                        (a - fd).abs() <= tol * fd.abs().max(1.0),
                        "kind {spec_idx} instance {instance} coord {p}: analytic {a} fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_kind_is_monotone_in_the_mask() {
        let mut rng = Rng::new(33);
        let data = (0..64).map(|_| rng.uniform_in(0.5, 1.0)).collect();
        let x0 = Image::new(8, 8, 1, data).unwrap();
        let spec = PerturbSpec::constant(vec![0.3]);
        let m1 = random_kink_free_mask(&mut rng, 8, 8);
        let m2_data = m1.data().iter().map(|v| (v + 0.04).min(1.0)).collect();
        let m2 = Mask::new(8, 8, m2_data).unwrap();
        let out1 = apply(&spec, &x0, &m1).unwrap();
        let out2 = apply(&spec, &x0, &m2).unwrap();
        for (a, b) in out1.data().iter().zip(out2.data()) {
            assert!(b >= a, "larger mask must keep more of the brighter image");
        }
    }

    #[test]
    fn bad_masks_and_specs_are_rejected() {
        let x0 = Image::zeros(8, 8, 1);
        let spec = PerturbSpec::constant(vec![0.5]);
        assert!(matches!(
            apply(&spec, &x0, &Mask::zeros(4, 4)),
            Err(Error::ShapeMismatch(_))
        ));
        let wrong_arity = PerturbSpec::constant(vec![0.5, 0.5]);
        assert!(apply(&wrong_arity, &x0, &Mask::zeros(8, 8)).is_err());
        let mut bad_sigma = PerturbSpec::blur(1.0);
        bad_sigma.sigma0 = -1.0;
        assert!(matches!(
            apply(&bad_sigma, &x0, &Mask::zeros(8, 8)),
            Err(Error::InvalidParameter(_))
        ));
        let mut bad_noise = PerturbSpec::noise(vec![0.5], 0.2, 0);
        bad_noise.noise_sigma = f64::NAN;
        assert!(apply(&bad_noise, &x0, &Mask::zeros(8, 8)).is_err());
        let up_bad = Image::zeros(4, 4, 1);
        assert!(apply_with_input_gradient(&spec, &x0, &Mask::zeros(8, 8), &up_bad).is_err());
    }
}
