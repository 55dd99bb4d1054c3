//! Total-variation energy of a mask and its gradient.
//!
//! The energy is `sum_u |m(u+ex) - m(u)|^beta + |m(u+ey) - m(u)|^beta` over
//! forward differences; differences that would cross the far border are zero.
//! `beta > 1` makes the energy differentiable, with the convention that a
//! difference of exactly zero contributes zero gradient.

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// Total-variation energy with exponent `beta >= 1`.
pub fn tv_energy(mask: &Mask, beta: f64) -> f64 {
    debug_assert!(beta >= 1.0);
    let (h, w) = (mask.height(), mask.width());
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = mask.at(y, x);
            if x + 1 < w {
                sum += libm::pow((mask.at(y, x + 1) - v).abs(), beta);
            }
            if y + 1 < h {
                sum += libm::pow((mask.at(y + 1, x) - v).abs(), beta);
            }
        }
    }
    sum
}

/// Analytic gradient of [`tv_energy`]; requires `beta > 1`.
pub fn tv_gradient(mask: &Mask, beta: f64) -> Result<Grid> {
    if !(beta > 1.0) {
        return Err(Error::UnsupportedExponent(beta));
    }
    let (h, w) = (mask.height(), mask.width());
    let mut grad = Grid::zeros(h, w);
    let mut scatter = |y0: usize, x0: usize, y1: usize, x1: usize| {
        let d = mask.at(y1, x1) - mask.at(y0, x0);
        if d == 0.0 {
            return;
        }
        let g = beta * libm::pow(d.abs(), beta - 1.0) * d.signum();
        grad.set(y1, x1, grad.at(y1, x1) + g);
        grad.set(y0, x0, grad.at(y0, x0) - g);
    };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                scatter(y, x, y, x + 1);
            }
            if y + 1 < h {
                scatter(y, x, y + 1, x);
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec::Vec;

    /// Oracle: energy recomputed with an explicit double loop over both
    /// difference directions, no shared code with the implementation above.
    fn tv_energy_naive(data: &[f64], h: usize, w: usize, beta: f64) -> f64 {
        let at = |y: usize, x: usize| data[y * w + x];
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                let dx = if x + 1 < w { at(y, x + 1) - at(y, x) } else { 0.0 };
                let dy = if y + 1 < h { at(y + 1, x) - at(y, x) } else { 0.0 };
                total += libm::pow(dx.abs(), beta) + libm::pow(dy.abs(), beta);
            }
        }
        total
    }

    fn interior_random_mask(rng: &mut Rng, h: usize, w: usize) -> Mask {
        // Values stay inside (0.05, 0.95) so finite-difference probes remain
        // valid masks.
        let data: Vec<f64> = (0..h * w).map(|_| rng.uniform_in(0.05, 0.95)).collect();
        Mask::new(h, w, data).unwrap()
    }

    #[test]
    fn constant_mask_has_zero_energy_and_gradient() {
        let m = Mask::constant(4, 5, 0.42).unwrap();
        assert_eq!(tv_energy(&m, 3.0), 0.0);
        let g = tv_gradient(&m, 3.0).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_step_energy_beta_three() {
        let m = Mask::new(2, 2, alloc::vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(tv_energy(&m, 3.0), 2.0);
    }

    #[test]
    fn two_by_two_step_gradient_beta_two() {
        let m = Mask::new(2, 2, alloc::vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let g = tv_gradient(&m, 2.0).unwrap();
        assert_eq!(g.data(), &[-2.0, 2.0, -2.0, 2.0]);
    }

    #[test]
    fn gradient_rejects_beta_at_most_one() {
        let m = Mask::constant(2, 2, 0.5).unwrap();
        assert_eq!(tv_gradient(&m, 1.0).unwrap_err(), Error::UnsupportedExponent(1.0));
        assert!(tv_gradient(&m, 0.5).is_err());
    }

    #[test]
    fn energy_matches_naive_double_loop() {
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let m = interior_random_mask(&mut rng, 8, 8);
            for &beta in &[1.0, 2.0, 3.0] {
                let fast = tv_energy(&m, beta);
                let slow = tv_energy_naive(m.data(), 8, 8, beta);
                assert!((fast - slow).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn energy_is_nonnegative_and_zero_only_for_constants() {
        let mut rng = Rng::new(23);
        for _ in 0..50 {
            let m = interior_random_mask(&mut rng, 6, 6);
            let e = tv_energy(&m, 3.0);
            assert!(e >= 0.0);
            let constant = m.data().windows(2).all(|p| p[0] == p[1]);
            assert_eq!(e == 0.0, constant);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = Rng::new(31);
        let step = 1e-6;
        for trial in 0..50 {
            let m = interior_random_mask(&mut rng, 6, 6);
            for &beta in &[2.0, 3.0] {
                let analytic = tv_gradient(&m, beta).unwrap();
                let mut fd = Vec::with_capacity(36);
                for i in 0..36 {
                    let mut plus = m.data().to_vec();
                    let mut minus = plus.clone();
                    plus[i] += step;
                    minus[i] -= step;
                    let e_plus = tv_energy_naive(&plus, 6, 6, beta);
                    let e_minus = tv_energy_naive(&minus, 6, 6, beta);
                    fd.push((e_plus - e_minus) / (2.0 * step));
                }
                let mut num = 0.0;
                let mut den = 0.0;
                for (a, b) in analytic.data().iter().zip(&fd) {
                    num += (a - b) * (a - b);
                    den += b * b;
                }
                let rel = libm::sqrt(num) / libm::sqrt(den).max(1e-30);
                assert!(rel < 1e-5, "trial {trial} beta {beta}: rel err {rel}");
            }
        }
    }
}
