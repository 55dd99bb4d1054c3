//! The black-box scoring contract and the built-in reference models.
//!
//! A [`BlackBox`] maps an image to one finite score per class and exposes the
//! exact analytic gradient of any class score with respect to the input.
//! Three implementations ship with the crate: [`LinearModel`] (the textbook
//! case whose gradient ignores the image), [`RegionMeanModel`] (an oracle
//! whose salient support is known exactly), and [`TinyCnn`] (a small
//! conv/pool/conv/pool/fc network with hand-derived backpropagation, trained
//! on the synthetic [`ShapeCorpus`]).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::BoundingBox;
use crate::grid::Image;
use crate::rng::Rng;

/// Expected input geometry of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, x: &Image) -> bool {
        x.height() == self.height && x.width() == self.width && x.channels() == self.channels
    }
}

/// Differentiable classifier contract: `C` finite scores plus the exact
/// analytic gradient of any single class score.
pub trait BlackBox {
    fn input_shape(&self) -> InputShape;

    fn num_classes(&self) -> usize;

    /// One finite score per class.
    fn score(&self, x: &Image) -> Result<Vec<f64>>;

    /// Gradient of `score[class]` with respect to every input entry, shaped
    /// like the input.
    fn gradient(&self, x: &Image, class: usize) -> Result<Image>;

    /// Scores plus the gradient of the summed scores over `classes`.
    /// Implementations may fuse the passes; the default just loops.
    fn score_and_gradient_sum(&self, x: &Image, classes: &[usize]) -> Result<(Vec<f64>, Image)> {
        let scores = self.score(x)?;
        let shape = self.input_shape();
        let mut total = Image::zeros(shape.height, shape.width, shape.channels);
        for &c in classes {
            let g = self.gradient(x, c)?;
            for (t, v) in total.data_mut().iter_mut().zip(g.data()) {
                *t += v;
            }
        }
        Ok((scores, total))
    }
}

fn check_shape(shape: InputShape, x: &Image) -> Result<()> {
    if !shape.matches(x) {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{}x{} vs model {}x{}x{}",
            x.height(),
            x.width(),
            x.channels(),
            shape.height,
            shape.width,
            shape.channels
        )));
    }
    Ok(())
}

fn check_class(class: usize, num_classes: usize) -> Result<()> {
    if class >= num_classes {
        return Err(Error::InvalidClass { class, num_classes });
    }
    Ok(())
}

/// Single-output affine model `score(x) = <w, x> + b`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    weights: Image,
    bias: f64,
}

impl LinearModel {
    pub fn new(weights: Image, bias: f64) -> Result<Self> {
        if !bias.is_finite() {
            return Err(Error::InvalidParameter(String::from("bias must be finite")));
        }
        Ok(LinearModel { weights, bias })
    }

    pub fn weights(&self) -> &Image {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }
}

impl BlackBox for LinearModel {
    fn input_shape(&self) -> InputShape {
        InputShape {
            height: self.weights.height(),
            width: self.weights.width(),
            channels: self.weights.channels(),
        }
    }

    fn num_classes(&self) -> usize {
        1
    }

    fn score(&self, x: &Image) -> Result<Vec<f64>> {
        check_shape(self.input_shape(), x)?;
        let dot: f64 = self.weights.data().iter().zip(x.data()).map(|(w, v)| w * v).sum();
        Ok(vec![dot + self.bias])
    }

    fn gradient(&self, x: &Image, class: usize) -> Result<Image> {
        check_shape(self.input_shape(), x)?;
        check_class(class, 1)?;
        Ok(self.weights.clone())
    }
}

/// Oracle model: `score_c` is the mean intensity over a known pixel set
/// `R_c` (all channels), so the exactly salient support is `R_c` itself.
#[derive(Debug, Clone)]
pub struct RegionMeanModel {
    shape: InputShape,
    /// Per class, sorted spatial pixel indices `y * width + x`.
    regions: Vec<Vec<usize>>,
}

impl RegionMeanModel {
    pub fn new(shape: InputShape, regions: Vec<Vec<usize>>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::InvalidInput(String::from("need at least one region")));
        }
        let pixels = shape.height * shape.width;
        for region in &regions {
            if region.is_empty() {
                return Err(Error::InvalidInput(String::from("regions must be nonempty")));
            }
            if region.iter().any(|&p| p >= pixels) {
                return Err(Error::InvalidInput(String::from("region pixel out of bounds")));
            }
        }
        Ok(RegionMeanModel { shape, regions })
    }

    /// One class per box; the region is the box interior.
    pub fn from_boxes(shape: InputShape, boxes: &[BoundingBox]) -> Result<Self> {
        let mut regions = Vec::with_capacity(boxes.len());
        for b in boxes {
            if b.x1 > shape.width || b.y1 > shape.height {
                return Err(Error::InvalidInput(String::from("box out of bounds")));
            }
            let mut region = Vec::with_capacity(b.area());
            for y in b.y0..b.y1 {
                for x in b.x0..b.x1 {
                    region.push(y * shape.width + x);
                }
            }
            regions.push(region);
        }
        RegionMeanModel::new(shape, regions)
    }

    pub fn regions(&self) -> &[Vec<usize>] {
        &self.regions
    }
}

impl BlackBox for RegionMeanModel {
    fn input_shape(&self) -> InputShape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.regions.len()
    }

    fn score(&self, x: &Image) -> Result<Vec<f64>> {
        check_shape(self.shape, x)?;
        let c = self.shape.channels;
        let mut scores = Vec::with_capacity(self.regions.len());
        for region in &self.regions {
            let mut sum = 0.0;
            for &p in region {
                for ch in 0..c {
                    sum += x.data()[p * c + ch];
                }
            }
            scores.push(sum / (region.len() * c) as f64);
        }
        Ok(scores)
    }

    fn gradient(&self, x: &Image, class: usize) -> Result<Image> {
        check_shape(self.shape, x)?;
        check_class(class, self.regions.len())?;
        let c = self.shape.channels;
        let region = &self.regions[class];
        let v = 1.0 / (region.len() * c) as f64;
        let mut g = Image::zeros(self.shape.height, self.shape.width, self.shape.channels);
        for &p in region {
            for ch in 0..c {
                g.data_mut()[p * c + ch] = v;
            }
        }
        Ok(g)
    }
}

const CONV1_FILTERS: usize = 8;
const CONV2_FILTERS: usize = 16;
const KERNEL: usize = 3;
const POOL: usize = 2;

/// Two stride-1 3x3 convolutions with same-size zero padding, each followed
/// by ReLU and a 2x2 max-pool, then a fully-connected softmax head. Input
/// sides must be divisible by 4. All gradients are hand-derived.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    shape: InputShape,
    num_classes: usize,
    conv1_w: Vec<f64>,
    conv1_b: Vec<f64>,
    conv2_w: Vec<f64>,
    conv2_b: Vec<f64>,
    fc_w: Vec<f64>,
    fc_b: Vec<f64>,
}

/// Intermediate activations of one forward pass, kept for backpropagation.
struct Activations {
    z1: Vec<f64>,
    p1: Vec<f64>,
    idx1: Vec<usize>,
    z2: Vec<f64>,
    p2: Vec<f64>,
    idx2: Vec<usize>,
    probs: Vec<f64>,
}

/// Parameter gradients accumulated by the trainer.
struct ParamGrads {
    conv1_w: Vec<f64>,
    conv1_b: Vec<f64>,
    conv2_w: Vec<f64>,
    conv2_b: Vec<f64>,
    fc_w: Vec<f64>,
    fc_b: Vec<f64>,
}

impl ParamGrads {
    fn zeros(model: &TinyCnn) -> Self {
        ParamGrads {
            conv1_w: vec![0.0; model.conv1_w.len()],
            conv1_b: vec![0.0; model.conv1_b.len()],
            conv2_w: vec![0.0; model.conv2_w.len()],
            conv2_b: vec![0.0; model.conv2_b.len()],
            fc_w: vec![0.0; model.fc_w.len()],
            fc_b: vec![0.0; model.fc_b.len()],
        }
    }
}

impl TinyCnn {
    /// He-initialized random parameters, a pure function of the seed.
    pub fn new_random(shape: InputShape, num_classes: usize, seed: u64) -> Result<Self> {
        Self::check_geometry(shape, num_classes)?;
        let mut rng = Rng::new(seed);
        let mut init = |n: usize, fan_in: usize| -> Vec<f64> {
            let std = libm::sqrt(2.0 / fan_in as f64);
            (0..n).map(|_| std * rng.normal()).collect()
        };
        let c_in = shape.channels;
        let feat = Self::feature_len(shape);
        Ok(TinyCnn {
            shape,
            num_classes,
            conv1_w: init(CONV1_FILTERS * c_in * KERNEL * KERNEL, c_in * KERNEL * KERNEL),
            conv1_b: vec![0.0; CONV1_FILTERS],
            conv2_w: init(
                CONV2_FILTERS * CONV1_FILTERS * KERNEL * KERNEL,
                CONV1_FILTERS * KERNEL * KERNEL,
            ),
            conv2_b: vec![0.0; CONV2_FILTERS],
            fc_w: init(num_classes * feat, feat),
            fc_b: vec![0.0; num_classes],
        })
    }

    /// Rebuilds a model from raw parameter tensors (e.g. deserialization).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        shape: InputShape,
        num_classes: usize,
        conv1_w: Vec<f64>,
        conv1_b: Vec<f64>,
        conv2_w: Vec<f64>,
        conv2_b: Vec<f64>,
        fc_w: Vec<f64>,
        fc_b: Vec<f64>,
    ) -> Result<Self> {
        Self::check_geometry(shape, num_classes)?;
        let feat = Self::feature_len(shape);
        let expect = [
            (conv1_w.len(), CONV1_FILTERS * shape.channels * KERNEL * KERNEL, "conv1_w"),
            (conv1_b.len(), CONV1_FILTERS, "conv1_b"),
            (conv2_w.len(), CONV2_FILTERS * CONV1_FILTERS * KERNEL * KERNEL, "conv2_w"),
            (conv2_b.len(), CONV2_FILTERS, "conv2_b"),
            (fc_w.len(), num_classes * feat, "fc_w"),
            (fc_b.len(), num_classes, "fc_b"),
        ];
        for (got, want, name) in expect {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name}: length {got}, expected {want}")));
            }
        }
        Ok(TinyCnn { shape, num_classes, conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b })
    }

    fn check_geometry(shape: InputShape, num_classes: usize) -> Result<()> {
        if shape.height % 4 != 0 || shape.width % 4 != 0 || shape.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "input sides must be nonzero multiples of 4, got {}x{}x{}",
                shape.height, shape.width, shape.channels
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidParameter(String::from("need at least one class")));
        }
        Ok(())
    }

    fn feature_len(shape: InputShape) -> usize {
        (shape.height / 4) * (shape.width / 4) * CONV2_FILTERS
    }

    pub fn conv1_w(&self) -> &[f64] {
        &self.conv1_w
    }

    pub fn conv1_b(&self) -> &[f64] {
        &self.conv1_b
    }

    pub fn conv2_w(&self) -> &[f64] {
        &self.conv2_w
    }

    pub fn conv2_b(&self) -> &[f64] {
        &self.conv2_b
    }

    pub fn fc_w(&self) -> &[f64] {
        &self.fc_w
    }

    pub fn fc_b(&self) -> &[f64] {
        &self.fc_b
    }

    /// Same-size convolution: stride 1, zero padding 1, channel-last layout.
    fn conv_forward(
        input: &[f64],
        h: usize,
        w: usize,
        c_in: usize,
        weights: &[f64],
        biases: &[f64],
        c_out: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; h * w * c_out];
        let pad = KERNEL as isize / 2;
        for y in 0..h {
            for x in 0..w {
                for f in 0..c_out {
                    let mut acc = biases[f];
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let sx = x as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let px = (sy as usize * w + sx as usize) * c_in;
                            let wbase = ((f * c_in) * KERNEL + ky) * KERNEL + kx;
                            for ci in 0..c_in {
                                acc += weights[wbase + ci * KERNEL * KERNEL]
                                    * input[px + ci];
                            }
                        }
                    }
                    out[(y * w + x) * c_out + f] = acc;
                }
            }
        }
        out
    }

    /// 2x2 stride-2 max-pool over ReLU(z); ties keep the first window entry
    /// in row-major order, and ReLU's subgradient at exactly 0 is 0.
    fn pool_forward(z: &[f64], h: usize, w: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
        let (ph, pw) = (h / POOL, w / POOL);
        let mut out = vec![0.0; ph * pw * c];
        let mut idx = vec![0usize; ph * pw * c];
        for py in 0..ph {
            for px in 0..pw {
                for ch in 0..c {
                    let mut best_v = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for wy in 0..POOL {
                        for wx in 0..POOL {
                            let y = py * POOL + wy;
                            let x = px * POOL + wx;
                            let i = (y * w + x) * c + ch;
                            let v = z[i].max(0.0);
                            if v > best_v {
                                best_v = v;
                                best_i = i;
                            }
                        }
                    }
                    let o = (py * pw + px) * c + ch;
                    out[o] = best_v;
                    idx[o] = best_i;
                }
            }
        }
        (out, idx)
    }

    fn forward(&self, x: &Image) -> Activations {
        let (h, w) = (self.shape.height, self.shape.width);
        let z1 = Self::conv_forward(
            x.data(),
            h,
            w,
            self.shape.channels,
            &self.conv1_w,
            &self.conv1_b,
            CONV1_FILTERS,
        );
        let (p1, idx1) = Self::pool_forward(&z1, h, w, CONV1_FILTERS);
        let (h2, w2) = (h / POOL, w / POOL);
        let z2 =
            Self::conv_forward(&p1, h2, w2, CONV1_FILTERS, &self.conv2_w, &self.conv2_b, CONV2_FILTERS);
        let (p2, idx2) = Self::pool_forward(&z2, h2, w2, CONV2_FILTERS);
        let feat = p2.len();
        let mut logits = self.fc_b.clone();
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &self.fc_w[c * feat..(c + 1) * feat];
            *logit += row.iter().zip(&p2).map(|(a, b)| a * b).sum::<f64>();
        }
        let probs = softmax(&logits);
        Activations { z1, p1, idx1, z2, p2, idx2, probs }
    }

    /// Backpropagates a logit-space gradient. Returns the input gradient;
    /// when `grads` is provided, parameter gradients are accumulated into it.
    fn backward(
        &self,
        x: &Image,
        acts: &Activations,
        dlogits: &[f64],
        mut grads: Option<&mut ParamGrads>,
    ) -> Vec<f64> {
        let (h, w) = (self.shape.height, self.shape.width);
        let (h2, w2) = (h / POOL, w / POOL);
        let feat = acts.p2.len();

        // Fully-connected layer.
        let mut dp2 = vec![0.0; feat];
        for (c, &dl) in dlogits.iter().enumerate() {
            let row = &self.fc_w[c * feat..(c + 1) * feat];
            for (d, &wv) in dp2.iter_mut().zip(row) {
                *d += wv * dl;
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            for (c, &dl) in dlogits.iter().enumerate() {
                let row = &mut g.fc_w[c * feat..(c + 1) * feat];
                for (slot, &p) in row.iter_mut().zip(&acts.p2) {
                    *slot += dl * p;
                }
                g.fc_b[c] += dl;
            }
        }

        // Unpool + ReLU onto conv2 pre-activations.
        let mut dz2 = vec![0.0; acts.z2.len()];
        for (o, &d) in dp2.iter().enumerate() {
            let i = acts.idx2[o];
            if acts.z2[i] > 0.0 {
                dz2[i] += d;
            }
        }

        // conv2: gradient to p1 (and to conv2 parameters).
        let mut dp1 = vec![0.0; acts.p1.len()];
        self.conv_backward(
            &acts.p1,
            &mut dp1,
            &dz2,
            h2,
            w2,
            CONV1_FILTERS,
            &self.conv2_w,
            CONV2_FILTERS,
            grads.as_deref_mut().map(|g| (&mut g.conv2_w, &mut g.conv2_b)),
        );

        // Unpool + ReLU onto conv1 pre-activations.
        let mut dz1 = vec![0.0; acts.z1.len()];
        for (o, &d) in dp1.iter().enumerate() {
            let i = acts.idx1[o];
            if acts.z1[i] > 0.0 {
                dz1[i] += d;
            }
        }

        // conv1: gradient to the input (and to conv1 parameters).
        let mut dx = vec![0.0; x.data().len()];
        self.conv_backward(
            x.data(),
            &mut dx,
            &dz1,
            h,
            w,
            self.shape.channels,
            &self.conv1_w,
            CONV1_FILTERS,
            grads.as_deref_mut().map(|g| (&mut g.conv1_w, &mut g.conv1_b)),
        );
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        input: &[f64],
        dinput: &mut [f64],
        dout: &[f64],
        h: usize,
        w: usize,
        c_in: usize,
        weights: &[f64],
        c_out: usize,
        wgrads: Option<(&mut Vec<f64>, &mut Vec<f64>)>,
    ) {
        let pad = KERNEL as isize / 2;
        let (mut dw, mut db) = match wgrads {
            Some((dw, db)) => (Some(dw), Some(db)),
            None => (None, None),
        };
        for y in 0..h {
            for x in 0..w {
                for f in 0..c_out {
                    let g = dout[(y * w + x) * c_out + f];
                    if g == 0.0 {
                        continue;
                    }
                    if let Some(db) = db.as_deref_mut() {
                        db[f] += g;
                    }
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let sx = x as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let px = (sy as usize * w + sx as usize) * c_in;
                            let wbase = ((f * c_in) * KERNEL + ky) * KERNEL + kx;
                            for ci in 0..c_in {
                                let wi = wbase + ci * KERNEL * KERNEL;
                                dinput[px + ci] += weights[wi] * g;
                                if let Some(dw) = dw.as_deref_mut() {
                                    dw[wi] += input[px + ci] * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl BlackBox for TinyCnn {
    fn input_shape(&self) -> InputShape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn score(&self, x: &Image) -> Result<Vec<f64>> {
        check_shape(self.shape, x)?;
        Ok(self.forward(x).probs)
    }

    fn gradient(&self, x: &Image, class: usize) -> Result<Image> {
        check_shape(self.shape, x)?;
        check_class(class, self.num_classes)?;
        let acts = self.forward(x);
        let dlogits = softmax_class_seed(&acts.probs, &[class]);
        let dx = self.backward(x, &acts, &dlogits, None);
        Image::new(self.shape.height, self.shape.width, self.shape.channels, dx)
    }

    fn score_and_gradient_sum(&self, x: &Image, classes: &[usize]) -> Result<(Vec<f64>, Image)> {
        check_shape(self.shape, x)?;
        for &c in classes {
            check_class(c, self.num_classes)?;
        }
        let acts = self.forward(x);
        let dlogits = softmax_class_seed(&acts.probs, classes);
        let dx = self.backward(x, &acts, &dlogits, None);
        let grad = Image::new(self.shape.height, self.shape.width, self.shape.channels, dx)?;
        Ok((acts.probs, grad))
    }
}

/// Logit-space gradient of `sum_{c in classes} prob_c`:
/// `d prob_c / d logit_j = prob_c (delta_cj - prob_j)`.
fn softmax_class_seed(probs: &[f64], classes: &[usize]) -> Vec<f64> {
    let mut seed = vec![0.0; probs.len()];
    for &c in classes {
        let pc = probs[c];
        for (j, s) in seed.iter_mut().enumerate() {
            let delta = if j == c { 1.0 } else { 0.0 };
            *s += pc * (delta - probs[j]);
        }
    }
    seed
}

/// Shape classes of the synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Square = 0,
    Disk = 1,
    Cross = 2,
}

impl ShapeClass {
    pub fn from_label(label: usize) -> Option<ShapeClass> {
        match label {
            0 => Some(ShapeClass::Square),
            1 => Some(ShapeClass::Disk),
            2 => Some(ShapeClass::Cross),
            _ => None,
        }
    }
}

pub const SHAPE_IMAGE_SIDE: usize = 32;
pub const SHAPE_CLASSES: usize = 3;

/// Labeled synthetic images, one bright shape each on a noisy background,
/// with tight ground-truth boxes.
#[derive(Debug, Clone)]
pub struct ShapeCorpus {
    images: Vec<Image>,
    labels: Vec<usize>,
    boxes: Vec<BoundingBox>,
}

impl ShapeCorpus {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, boxes: Vec<BoundingBox>) -> Result<Self> {
        if images.len() != labels.len() || images.len() != boxes.len() {
            return Err(Error::ShapeMismatch(String::from(
                "images, labels, and boxes must have equal lengths",
            )));
        }
        Ok(ShapeCorpus { images, labels, boxes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn bbox(&self, i: usize) -> BoundingBox {
        self.boxes[i]
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    /// Contiguous sub-corpus `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> ShapeCorpus {
        ShapeCorpus {
            images: self.images[from..to].to_vec(),
            labels: self.labels[from..to].to_vec(),
            boxes: self.boxes[from..to].to_vec(),
        }
    }
}

/// Draws `n` samples; sample `i` depends only on `(seed, i)`. Shapes are
/// bright (`0.8..1.0`) on a dim textured background (`0.0..0.2`), boxes are
/// tight, and box areas stay within `[16, 512]` pixels of the 32x32 raster.
pub fn generate_shape_corpus(n: usize, seed: u64) -> Result<ShapeCorpus> {
    if n == 0 {
        return Err(Error::InvalidParameter(String::from("corpus size must be >= 1")));
    }
    let side = SHAPE_IMAGE_SIDE;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Rng::derive(seed, i as u64);
        let label = rng.below(SHAPE_CLASSES);
        let mut img = Image::zeros(side, side, 1);
        for v in img.data_mut().iter_mut() {
            *v = rng.uniform_in(0.0, 0.2);
        }
        let bbox = match ShapeClass::from_label(label).unwrap() {
            ShapeClass::Square => draw_square(&mut img, &mut rng),
            ShapeClass::Disk => draw_disk(&mut img, &mut rng),
            ShapeClass::Cross => draw_cross(&mut img, &mut rng),
        };
        debug_assert!(bbox.area() >= 16 && bbox.area() <= side * side / 2);
        images.push(img);
        labels.push(label);
        boxes.push(bbox);
    }
    ShapeCorpus::new(images, labels, boxes)
}

fn shape_value(rng: &mut Rng) -> f64 {
    rng.uniform_in(0.8, 1.0)
}

fn draw_square(img: &mut Image, rng: &mut Rng) -> BoundingBox {
    let side = img.height();
    let s = 5 + rng.below(16); // 5..=20
    let y0 = rng.below(side - s + 1);
    let x0 = rng.below(side - s + 1);
    for y in y0..y0 + s {
        for x in x0..x0 + s {
            let v = shape_value(rng);
            img.set(y, x, 0, v);
        }
    }
    BoundingBox::new(x0, y0, x0 + s, y0 + s)
}

fn draw_disk(img: &mut Image, rng: &mut Rng) -> BoundingBox {
    let side = img.height();
    let r = 2 + rng.below(9); // 2..=10
    let cy = r + rng.below(side - 2 * r);
    let cx = r + rng.below(side - 2 * r);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            let dy = y as isize - cy as isize;
            let dx = x as isize - cx as isize;
            if dy * dy + dx * dx <= (r * r) as isize {
                let v = shape_value(rng);
                img.set(y, x, 0, v);
            }
        }
    }
    BoundingBox::new(cx - r, cy - r, cx + r + 1, cy + r + 1)
}

fn draw_cross(img: &mut Image, rng: &mut Rng) -> BoundingBox {
    let side = img.height();
    let s = 7 + rng.below(15); // 7..=21
    let t = (s / 4).max(2);
    let y0 = rng.below(side - s + 1);
    let x0 = rng.below(side - s + 1);
    let off = (s - t) / 2;
    // Vertical bar: full height, centered columns.
    for y in y0..y0 + s {
        for x in x0 + off..x0 + off + t {
            let v = shape_value(rng);
            img.set(y, x, 0, v);
        }
    }
    // Horizontal bar: full width, centered rows.
    for y in y0 + off..y0 + off + t {
        for x in x0..x0 + s {
            let v = shape_value(rng);
            img.set(y, x, 0, v);
        }
    }
    BoundingBox::new(x0, y0, x0 + s, y0 + s)
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Trained model plus the training record.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyCnn,
    pub history: Vec<EpochStats>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
}

const BATCH: usize = 32;

/// Minibatch SGD with momentum on softmax cross-entropy. Deterministic given
/// `seed`; `epochs = 0` returns the seeded random initialization unchanged.
pub fn train_tiny_cnn(
    train: &ShapeCorpus,
    test: Option<&ShapeCorpus>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidInput(String::from("training corpus is empty")));
    }
    if !lr.is_finite() || lr <= 0.0 {
        return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {lr}")));
    }
    let shape = InputShape {
        height: train.image(0).height(),
        width: train.image(0).width(),
        channels: train.image(0).channels(),
    };
    let num_classes = train.labels().iter().copied().max().unwrap_or(0) + 1;
    let num_classes = num_classes.max(SHAPE_CLASSES);
    let mut model = TinyCnn::new_random(shape, num_classes, seed)?;
    let mut rng = Rng::derive(seed, 0x7261_696e); // shuffle stream
    let momentum = 0.9;
    let mut velocity = ParamGrads::zeros(&model);
    let mut history = Vec::with_capacity(epochs);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..epochs {
        // Fisher-Yates shuffle.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(BATCH) {
            let mut grads = ParamGrads::zeros(&model);
            for &i in batch {
                let x = train.image(i);
                let label = train.label(i);
                if label >= num_classes {
                    return Err(Error::InvalidInput(format!("label {label} out of range")));
                }
                let acts = model.forward(x);
                let p = acts.probs[label];
                loss_sum += -libm::log(p.max(1e-300));
                let pred = argmax(&acts.probs);
                if pred == label {
                    correct += 1;
                }
                // Softmax cross-entropy: d loss / d logit = prob - onehot.
                let mut dlogits = acts.probs.clone();
                dlogits[label] -= 1.0;
                model.backward(x, &acts, &dlogits, Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f64;
            let pairs: [(&mut Vec<f64>, &Vec<f64>); 6] = [
                (&mut velocity.conv1_w, &grads.conv1_w),
                (&mut velocity.conv1_b, &grads.conv1_b),
                (&mut velocity.conv2_w, &grads.conv2_w),
                (&mut velocity.conv2_b, &grads.conv2_b),
                (&mut velocity.fc_w, &grads.fc_w),
                (&mut velocity.fc_b, &grads.fc_b),
            ];
            for (vel, grad) in pairs {
                for (v, g) in vel.iter_mut().zip(grad) {
                    *v = momentum * *v + scale * g;
                }
            }
            let updates: [(&mut Vec<f64>, &Vec<f64>); 6] = [
                (&mut model.conv1_w, &velocity.conv1_w),
                (&mut model.conv1_b, &velocity.conv1_b),
                (&mut model.conv2_w, &velocity.conv2_w),
                (&mut model.conv2_b, &velocity.conv2_b),
                (&mut model.fc_w, &velocity.fc_w),
                (&mut model.fc_b, &velocity.fc_b),
            ];
            for (param, vel) in updates {
                for (p, v) in param.iter_mut().zip(vel) {
                    *p -= lr * v;
                }
            }
        }
        let mean_loss = loss_sum / train.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::TrainingFailure(format!("loss diverged at epoch {epoch}")));
        }
        history.push(EpochStats {
            epoch,
            mean_loss,
            train_accuracy: correct as f64 / train.len() as f64,
        });
    }

    let final_train_accuracy = accuracy(&model, train)?;
    let final_test_accuracy = match test {
        Some(t) => Some(accuracy(&model, t)?),
        None => None,
    };
    Ok(TrainOutcome { model, history, final_train_accuracy, final_test_accuracy })
}

/// Fraction of samples whose argmax score equals the label.
pub fn accuracy(model: &dyn BlackBox, corpus: &ShapeCorpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput(String::from("corpus is empty")));
    }
    let mut correct = 0usize;
    for i in 0..corpus.len() {
        let scores = model.score(corpus.image(i))?;
        if argmax(&scores) == corpus.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / corpus.len() as f64)
}

/// First maximal index, row-major tie-breaking.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
