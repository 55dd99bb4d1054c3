//! Renormalized Gaussian mask upsampling.
//!
//! A low-resolution mask cell `u` sits at output pixel `scale*u + (scale-1)/2`
//! per axis. Each output pixel takes a Gaussian-weighted average over all
//! mask cells (sigma in output pixels), with weights renormalized per output
//! pixel so constants map to constants everywhere, borders included. The
//! weighting is separable, so the operator runs as a row pass then a column
//! pass; the adjoint (needed to backpropagate through the upsampling) is the
//! same passes transposed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::kernel::GaussianKernel;

/// Precomputed upsampling weights for one mask/output geometry.
#[derive(Debug, Clone)]
pub struct MaskUpsampler {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: AxisWeights,
    cols: AxisWeights,
}

/// Dense `out_len x in_len` weight table for one axis; each output row of
/// weights is nonnegative and sums to 1.
#[derive(Debug, Clone)]
struct AxisWeights {
    in_len: usize,
    weights: Vec<f64>,
}

impl AxisWeights {
    fn build(in_len: usize, out_len: usize, scale: usize, sigma: f64) -> AxisWeights {
        let s = scale as f64;
        let mut weights = vec![0.0; out_len * in_len];
        for v in 0..out_len {
            let row = &mut weights[v * in_len..(v + 1) * in_len];
            if sigma == 0.0 {
                // Degenerate kernel: all weight on the nearest cell center,
                // first one on the (unreachable for integer pixels) tie.
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (u, _) in row.iter().enumerate() {
                    let center = s * u as f64 + (s - 1.0) / 2.0;
                    let d = (v as f64 - center).abs();
                    if d < best_d {
                        best_d = d;
                        best = u;
                    }
                }
                row[best] = 1.0;
                continue;
            }
            let mut sum = 0.0;
            for (u, slot) in row.iter_mut().enumerate() {
                let center = s * u as f64 + (s - 1.0) / 2.0;
                let g = GaussianKernel::density(sigma, v as f64 - center);
                *slot = g;
                sum += g;
            }
            for slot in row.iter_mut() {
                *slot /= sum;
            }
        }
        AxisWeights { in_len, weights }
    }

    fn weight(&self, v: usize, u: usize) -> f64 {
        self.weights[v * self.in_len + u]
    }
}

impl MaskUpsampler {
    /// `sigma` is in output-pixel units. Output dims may be at most
    /// `mask dims * scale` (images whose sides are not multiples of the scale
    /// use a mask of `ceil(side / scale)` cells).
    pub fn new(
        in_h: usize,
        in_w: usize,
        scale: usize,
        sigma: f64,
        out_h: usize,
        out_w: usize,
    ) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidParameter(alloc::format!("scale must be >= 1, got {scale}")));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "mask-blur sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::InvalidParameter(alloc::string::String::from(
                "upsampler dims must be nonzero",
            )));
        }
        if out_h > in_h * scale || out_w > in_w * scale {
            return Err(Error::InvalidParameter(alloc::format!(
                "output {out_h}x{out_w} exceeds mask {in_h}x{in_w} at scale {scale}"
            )));
        }
        Ok(MaskUpsampler {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: AxisWeights::build(in_h, out_h, scale, sigma),
            cols: AxisWeights::build(in_w, out_w, scale, sigma),
        })
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Upsamples a mask; output values are convex combinations of the input,
    /// clamped against rounding drift.
    pub fn forward(&self, mask: &Mask) -> Result<Mask> {
        if mask.height() != self.in_h || mask.width() != self.in_w {
            return Err(Error::ShapeMismatch(alloc::format!(
                "mask {}x{} vs upsampler input {}x{}",
                mask.height(),
                mask.width(),
                self.in_h,
                self.in_w
            )));
        }
        // Expand columns, then rows.
        let mut wide = vec![0.0; self.in_h * self.out_w];
        for y in 0..self.in_h {
            for vx in 0..self.out_w {
                let mut acc = 0.0;
                for ux in 0..self.in_w {
                    acc += self.cols.weight(vx, ux) * mask.at(y, ux);
                }
                wide[y * self.out_w + vx] = acc;
            }
        }
        let mut out = vec![0.0; self.out_h * self.out_w];
        for vy in 0..self.out_h {
            for vx in 0..self.out_w {
                let mut acc = 0.0;
                for uy in 0..self.in_h {
                    acc += self.rows.weight(vy, uy) * wide[uy * self.out_w + vx];
                }
                out[vy * self.out_w + vx] = acc.clamp(0.0, 1.0);
            }
        }
        Mask::new(self.out_h, self.out_w, out)
    }

    /// Transpose of [`forward`](Self::forward) as a linear map: pulls a
    /// full-resolution gradient back onto mask cells.
    pub fn adjoint(&self, upstream: &Grid) -> Result<Grid> {
        if upstream.height() != self.out_h || upstream.width() != self.out_w {
            return Err(Error::ShapeMismatch(alloc::format!(
                "grid {}x{} vs upsampler output {}x{}",
                upstream.height(),
                upstream.width(),
                self.out_h,
                self.out_w
            )));
        }
        let mut narrow = vec![0.0; self.in_h * self.out_w];
        for uy in 0..self.in_h {
            for vx in 0..self.out_w {
                let mut acc = 0.0;
                for vy in 0..self.out_h {
                    acc += self.rows.weight(vy, uy) * upstream.at(vy, vx);
                }
                narrow[uy * self.out_w + vx] = acc;
            }
        }
        let mut out = Grid::zeros(self.in_h, self.in_w);
        for uy in 0..self.in_h {
            for ux in 0..self.in_w {
                let mut acc = 0.0;
                for vx in 0..self.out_w {
                    acc += self.cols.weight(vx, ux) * narrow[uy * self.out_w + vx];
                }
                out.set(uy, ux, acc);
            }
        }
        Ok(out)
    }
}

/// One-shot convenience over [`MaskUpsampler`].
pub fn upsample_mask(
    mask: &Mask,
    scale: usize,
    sigma: f64,
    out_h: usize,
    out_w: usize,
) -> Result<Mask> {
    MaskUpsampler::new(mask.height(), mask.width(), scale, sigma, out_h, out_w)?.forward(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Oracle: evaluate the defining double sum independently per output
    /// pixel, with explicit 2-D product weights and renormalization.
    fn upsample_direct(mask: &Mask, scale: usize, sigma: f64, out_h: usize, out_w: usize) -> Grid {
        let s = scale as f64;
        let mut out = Grid::zeros(out_h, out_w);
        for vy in 0..out_h {
            for vx in 0..out_w {
                let mut num = 0.0;
                let mut den = 0.0;
                for uy in 0..mask.height() {
                    for ux in 0..mask.width() {
                        let cy = s * uy as f64 + (s - 1.0) / 2.0;
                        let cx = s * ux as f64 + (s - 1.0) / 2.0;
                        let g = GaussianKernel::density(sigma, vy as f64 - cy)
                            * GaussianKernel::density(sigma, vx as f64 - cx);
                        num += g * mask.at(uy, ux);
                        den += g;
                    }
                }
                out.set(vy, vx, num / den);
            }
        }
        out
    }

    fn random_mask(rng: &mut Rng, h: usize, w: usize) -> Mask {
        let data = (0..h * w).map(|_| rng.uniform()).collect();
        Mask::new(h, w, data).unwrap()
    }

    #[test]
    fn one_cell_mask_becomes_constant_block() {
        let m = Mask::new(1, 1, vec![0.37]).unwrap();
        let up = upsample_mask(&m, 8, 5.0, 8, 8).unwrap();
        for &v in up.data() {
            assert!((v - 0.37).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_masks_stay_constant() {
        let m = Mask::constant(4, 4, 0.61).unwrap();
        let up = upsample_mask(&m, 8, 5.0, 32, 32).unwrap();
        for &v in up.data() {
            assert!((v - 0.61).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_hot_peak_lands_on_the_cell_center() {
        // Interior cells only: per-pixel renormalization shrinks the weight
        // denominator toward the raster border, which drags the peak of a
        // border cell's bump onto the border itself (see the test below).
        for &(u0y, u0x) in &[(1usize, 1usize), (1, 2), (2, 1), (2, 2)] {
            let mut data = vec![0.0; 16];
            data[u0y * 4 + u0x] = 1.0;
            let m = Mask::new(4, 4, data).unwrap();
            let up = upsample_mask(&m, 8, 5.0, 32, 32).unwrap();
            let mut best = (0usize, 0usize);
            let mut best_v = -1.0;
            for y in 0..32 {
                for x in 0..32 {
                    if up.at(y, x) > best_v {
                        best_v = up.at(y, x);
                        best = (y, x);
                    }
                }
            }
            let cy = 8.0 * u0y as f64 + 3.5;
            let cx = 8.0 * u0x as f64 + 3.5;
            assert!(
                (best.0 as f64 - cy).abs() <= 1.0 && (best.1 as f64 - cx).abs() <= 1.0,
                "one-hot at ({u0y},{u0x}): peak {best:?} vs center ({cy},{cx})"
            );
        }
    }

    #[test]
    fn corner_one_hot_peaks_at_the_border() {
        // Frozen consequence of renormalization: for the corner cell the
        // numerator decays slower than the denominator toward the border, so
        // the maximum sits at pixel (0, 0) rather than at the cell center.
        let mut data = vec![0.0; 16];
        data[0] = 1.0;
        let m = Mask::new(4, 4, data).unwrap();
        let up = upsample_mask(&m, 8, 5.0, 32, 32).unwrap();
        let mut best = (0usize, 0usize);
        let mut best_v = -1.0;
        for y in 0..32 {
            for x in 0..32 {
                if up.at(y, x) > best_v {
                    best_v = up.at(y, x);
                    best = (y, x);
                }
            }
        }
        assert_eq!(best, (0, 0));
    }

    #[test]
    fn forward_matches_direct_double_sum() {
        let mut rng = Rng::new(41);
        for &(h, w, scale, sigma, oh, ow) in &[
            (4usize, 4usize, 8usize, 5.0f64, 32usize, 32usize),
            (4, 4, 8, 5.0, 30, 29),
            (3, 5, 4, 2.0, 12, 20),
            (2, 2, 2, 0.8, 4, 4),
        ] {
            let m = random_mask(&mut rng, h, w);
            let fast = upsample_mask(&m, scale, sigma, oh, ow).unwrap();
            let slow = upsample_direct(&m, scale, sigma, oh, ow);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sigma_zero_at_scale_one_is_identity() {
        let mut rng = Rng::new(5);
        let m = random_mask(&mut rng, 5, 6);
        let up = upsample_mask(&m, 1, 0.0, 5, 6).unwrap();
        assert_eq!(up.data(), m.data());
    }

    #[test]
    fn sigma_zero_is_nearest_cell_replication() {
        let m = Mask::new(2, 2, vec![0.1, 0.4, 0.7, 1.0]).unwrap();
        let up = upsample_mask(&m, 2, 0.0, 4, 4).unwrap();
        // Pixel 0..2 map to cell 0, pixels 2..4 to cell 1 per axis.
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.at(y, x), m.at(y / 2, x / 2));
            }
        }
    }

    #[test]
    fn adjoint_agrees_with_forward_inner_product() {
        let mut rng = Rng::new(57);
        let ups = MaskUpsampler::new(4, 3, 8, 5.0, 31, 24).unwrap();
        for _ in 0..10 {
            let m = random_mask(&mut rng, 4, 3);
            let g_data: alloc::vec::Vec<f64> = (0..31 * 24).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let g = Grid::new(31, 24, g_data).unwrap();
            let fwd = ups.forward(&m).unwrap();
            let adj = ups.adjoint(&g).unwrap();
            let lhs: f64 = fwd.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = m.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn output_stays_in_unit_interval() {
        let mut rng = Rng::new(77);
        for _ in 0..20 {
            let m = random_mask(&mut rng, 4, 4);
            let up = upsample_mask(&m, 8, 5.0, 32, 32).unwrap();
            assert!(up.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let m = Mask::constant(4, 4, 0.5).unwrap();
        assert!(upsample_mask(&m, 0, 5.0, 32, 32).is_err());
        assert!(upsample_mask(&m, 8, -1.0, 32, 32).is_err());
        assert!(upsample_mask(&m, 8, 5.0, 33, 32).is_err());
    }
}
