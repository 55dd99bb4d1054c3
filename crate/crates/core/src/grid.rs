//! Dense 2-D containers: images, masks, heatmaps, and unconstrained grids.
//!
//! All buffers are row-major. Images are channel-last, so the flat index of
//! `(y, x, c)` is `(y * width + x) * channels + c`. Masks and heatmaps are
//! single-channel and share one mask value across image channels wherever a
//! mask meets an image.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Multi-channel raster with finite values. The nominal range for classifier
/// inputs is `[0, 1]`, but the type also carries signed fields such as
/// gradients, so only finiteness is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidInput(String::from("image dims must be nonzero")));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(String::from("image values must be finite")));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Mean value per channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (self.height * self.width) as f64;
        for s in sums.iter_mut() {
            *s /= n;
        }
        sums
    }

    /// Translates content by `(dy, dx)` with edge replication: output pixel
    /// `(y, x)` reads source `(y - dy, x - dx)` clamped into bounds.
    pub fn shift(&self, dy: isize, dx: isize) -> Image {
        if dy == 0 && dx == 0 {
            return self.clone();
        }
        let mut out = Image::zeros(self.height, self.width, self.channels);
        for y in 0..self.height {
            let sy = (y as isize - dy).clamp(0, self.height as isize - 1) as usize;
            for x in 0..self.width {
                let sx = (x as isize - dx).clamp(0, self.width as isize - 1) as usize;
                for c in 0..self.channels {
                    out.set(y, x, c, self.at(sy, sx, c));
                }
            }
        }
        out
    }

    /// Exact grid rotation by a multiple of 90 degrees counterclockwise.
    /// `quarter_turns` of 1 or 3 requires a square raster.
    pub fn rotate_quarter_turns(&self, quarter_turns: u32) -> Result<Image> {
        let q = quarter_turns % 4;
        if (q == 1 || q == 3) && self.height != self.width {
            return Err(Error::InvalidInput(String::from(
                "quarter-turn rotation needs a square image",
            )));
        }
        let mut out = self.clone();
        for _ in 0..q {
            let src = out.clone();
            // 90 degrees CCW: out(y, x) = src(x, w - 1 - y) on a square grid.
            let n = src.height;
            let mut rot = Image::zeros(n, n, src.channels);
            for y in 0..n {
                for x in 0..n {
                    for c in 0..src.channels {
                        rot.set(y, x, c, src.at(x, n - 1 - y, c));
                    }
                }
            }
            out = rot;
        }
        Ok(out)
    }
}

/// Single-channel grid with every value in `[0, 1]`. Value 1 preserves the
/// underlying pixel, 0 fully perturbs it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(String::from("mask dims must be nonzero")));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if !data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(String::from("mask values must lie in [0, 1]")));
        }
        Ok(Mask { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Mask::new(height, width, vec![value; height * width])
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Mask { height, width, data: vec![1.0; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Mask { height, width, data: vec![0.0; height * width] }
    }

    /// Clamps an arbitrary grid into a valid mask.
    pub fn from_grid_clamped(grid: &Grid) -> Mask {
        let data = grid.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Mask { height: grid.height(), width: grid.width(), data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[y * self.width + x] = v;
    }

    pub fn to_grid(&self) -> Grid {
        Grid { height: self.height, width: self.width, data: self.data.clone() }
    }

    /// Mask as a 1-channel image, e.g. for blurring.
    pub fn to_image(&self) -> Image {
        Image { height: self.height, width: self.width, channels: 1, data: self.data.clone() }
    }
}

/// Nonnegative, finite single-channel saliency field.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(String::from("heatmap dims must be nonzero")));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "heatmap data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if !data.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidInput(String::from(
                "heatmap values must be finite and nonnegative",
            )));
        }
        Ok(Heatmap { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Affine rescale of a heatmap onto `[0, 1]`. A constant heatmap maps to all
/// zeros rather than dividing by zero.
pub fn normalize_heatmap(h: &Heatmap) -> Heatmap {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in h.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    let data = if range <= 0.0 {
        vec![0.0; h.data().len()]
    } else {
        h.data().iter().map(|v| (v - lo) / range).collect()
    };
    Heatmap { height: h.height, width: h.width, data }
}

/// Unconstrained real-valued grid: gradients, optimizer moments, raw fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "grid data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Grid { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Grid { height, width, data: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// `self += scale * other`, shapes must match.
    pub fn add_scaled(&mut self, other: &Grid, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.data.iter_mut() {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_index_is_channel_last() {
        let img = Image::new(2, 3, 2, (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(img.at(0, 0, 0), 0.0);
        assert_eq!(img.at(0, 0, 1), 1.0);
        assert_eq!(img.at(0, 1, 0), 2.0);
        assert_eq!(img.at(1, 0, 0), 6.0);
        assert_eq!(img.at(1, 2, 1), 11.0);
    }

    #[test]
    fn image_rejects_bad_shape_and_nonfinite() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(Mask::new(1, 2, vec![0.0, 1.0]).is_ok());
        assert!(Mask::new(1, 2, vec![-0.01, 0.5]).is_err());
        assert!(Mask::new(1, 2, vec![0.5, 1.01]).is_err());
    }

    #[test]
    fn heatmap_rejects_negative_and_nan() {
        assert!(Heatmap::new(1, 2, vec![0.0, 3.0]).is_ok());
        assert!(Heatmap::new(1, 2, vec![-0.1, 0.0]).is_err());
        assert!(Heatmap::new(1, 2, vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn normalize_matches_affine_example() {
        let h = Heatmap::new(1, 3, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(normalize_heatmap(&h).data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_constant_gives_zeros() {
        let h = Heatmap::new(2, 2, vec![3.0; 4]).unwrap();
        assert_eq!(normalize_heatmap(&h).data(), &[0.0; 4]);
    }

    #[test]
    fn normalize_is_idempotent_on_normalized_input() {
        let h = Heatmap::new(1, 4, vec![0.0, 0.25, 0.75, 1.0]).unwrap();
        assert_eq!(normalize_heatmap(&h).data(), h.data());
    }

    #[test]
    fn shift_replicates_edges() {
        let img = Image::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = img.shift(0, 1);
        // Content moves right; the left column replicates the old left edge.
        assert_eq!(s.data(), &[1.0, 1.0, 3.0, 3.0]);
        let s = img.shift(1, 0);
        assert_eq!(s.data(), &[1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn rotation_round_trips() {
        let img = Image::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r4 = img.rotate_quarter_turns(4).unwrap();
        assert_eq!(r4, img);
        let r2 = img.rotate_quarter_turns(2).unwrap();
        assert_eq!(r2.data(), &[4.0, 3.0, 2.0, 1.0]);
        let r1 = img.rotate_quarter_turns(1).unwrap();
        assert_eq!(r1.rotate_quarter_turns(3).unwrap(), img);
    }

    #[test]
    fn rotation_rejects_non_square_quarter_turn() {
        let img = Image::zeros(2, 3, 1);
        assert!(img.rotate_quarter_turns(1).is_err());
        assert!(img.rotate_quarter_turns(2).is_ok());
    }

    #[test]
    fn channel_means_average_per_channel() {
        let img = Image::new(1, 2, 2, vec![0.0, 10.0, 1.0, 20.0]).unwrap();
        assert_eq!(img.channel_means(), vec![0.5, 15.0]);
    }
}
