//! Sampled Gaussian kernels and separable blur.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Image;

/// Normalized 1-D Gaussian, sampled at integer offsets `-radius..=radius`
/// with `radius = ceil(3 * sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    /// `sigma = 0` degenerates to the identity kernel `[1.0]`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "gaussian sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(GaussianKernel { sigma, radius: 0, weights: vec![1.0] });
        }
        let radius = libm::ceil(3.0 * sigma) as usize;
        let mut weights = Vec::with_capacity(2 * radius + 1);
        let inv = 1.0 / (2.0 * sigma * sigma);
        for k in -(radius as isize)..=(radius as isize) {
            let d = k as f64;
            weights.push(libm::exp(-d * d * inv));
        }
        let sum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= sum;
        }
        Ok(GaussianKernel { sigma, radius, weights })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Weights at offsets `-radius..=radius`; symmetric and summing to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Unnormalized density `exp(-d^2 / (2 sigma^2))` at a real offset.
    /// For `sigma = 0` this is 1 at `d = 0` and 0 elsewhere.
    pub fn density(sigma: f64, d: f64) -> f64 {
        if sigma == 0.0 {
            return if d == 0.0 { 1.0 } else { 0.0 };
        }
        libm::exp(-d * d / (2.0 * sigma * sigma))
    }
}

/// Isotropic Gaussian blur: one horizontal and one vertical pass per channel,
/// borders handled by edge replication. `sigma = 0` returns the input.
pub fn blur(image: &Image, sigma: f64) -> Result<Image> {
    let kernel = GaussianKernel::new(sigma)?;
    if kernel.radius() == 0 {
        return Ok(image.clone());
    }
    let horizontal = convolve_axis(image, &kernel, Axis::X);
    Ok(convolve_axis(&horizontal, &kernel, Axis::Y))
}

enum Axis {
    X,
    Y,
}

fn convolve_axis(image: &Image, kernel: &GaussianKernel, axis: Axis) -> Image {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let r = kernel.radius() as isize;
    let weights = kernel.weights();
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, wt) in weights.iter().enumerate() {
                    let off = i as isize - r;
                    let (sy, sx) = match axis {
                        Axis::X => (y, (x as isize + off).clamp(0, w as isize - 1) as usize),
                        Axis::Y => (((y as isize + off).clamp(0, h as isize - 1)) as usize, x),
                    };
                    acc += wt * image.at(sy, sx, ch);
                }
                out.set(y, x, ch, acc);
            }
        }
    }
    out
}
