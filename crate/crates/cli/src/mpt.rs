//! MPT1 tensor files: magic "MPT1", one byte of rank, rank little-endian
//! u32 dims, then the payload as little-endian IEEE-754 f32, row-major with
//! channels last. All image, mask, and heatmap artifacts use this format.

use std::fs;
use std::path::Path;

use maskexplain_core::grid::{Heatmap, Image, Mask};

use crate::error::{io_err, CliError, CliResult};

const MAGIC: [u8; 4] = *b"MPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write(path: &Path, dims: &[usize], data: &[f64]) -> CliResult<()> {
    if dims.len() > u8::MAX as usize {
        return Err(CliError::runtime(format!("tensor rank {} exceeds 255", dims.len())));
    }
    let expect: usize = dims.iter().product();
    if expect != data.len() {
        return Err(CliError::runtime(format!(
            "tensor dims {dims:?} imply {expect} values but {} were given",
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(4 + 1 + 4 * dims.len() + 4 * data.len());
    bytes.extend_from_slice(&MAGIC);
    bytes.push(dims.len() as u8);
    for &d in dims {
        let d32 = u32::try_from(d)
            .map_err(|_| CliError::runtime(format!("dimension {d} exceeds u32")))?;
        bytes.extend_from_slice(&d32.to_le_bytes());
    }
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err("write", path, e))
}

pub fn read(path: &Path) -> CliResult<Tensor> {
    let bytes = fs::read(path).map_err(|e| io_err("read", path, e))?;
    let fail = |why: &str| io_err("parse", path, why);
    if bytes.len() < 5 || bytes[..4] != MAGIC {
        return Err(fail("not an MPT1 tensor"));
    }
    let rank = bytes[4] as usize;
    let header = 5 + 4 * rank;
    if bytes.len() < header {
        return Err(fail("truncated dimension table"));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count = 1usize;
    for i in 0..rank {
        let off = 5 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| fail("dimension product overflows"))?;
        dims.push(d);
    }
    let payload = &bytes[header..];
    if payload.len() != 4 * count {
        return Err(fail("payload size does not match the dimensions"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor { dims, data })
}

pub fn write_image(path: &Path, img: &Image) -> CliResult<()> {
    write(path, &[img.height(), img.width(), img.channels()], img.data())
}

pub fn read_image(path: &Path) -> CliResult<Image> {
    let t = read(path)?;
    let [h, w, c] = t.dims[..] else {
        return Err(io_err("parse", path, format!("expected 3 dims, got {:?}", t.dims)));
    };
    Ok(Image::new(h, w, c, t.data)?)
}

pub fn write_mask(path: &Path, m: &Mask) -> CliResult<()> {
    write(path, &[m.height(), m.width()], m.data())
}

pub fn read_mask(path: &Path) -> CliResult<Mask> {
    let t = read(path)?;
    let [h, w] = t.dims[..] else {
        return Err(io_err("parse", path, format!("expected 2 dims, got {:?}", t.dims)));
    };
    Ok(Mask::new(h, w, t.data)?)
}

pub fn write_heatmap(path: &Path, h: &Heatmap) -> CliResult<()> {
    write(path, &[h.height(), h.width()], h.data())
}

pub fn read_heatmap(path: &Path) -> CliResult<Heatmap> {
    let t = read(path)?;
    let [h, w] = t.dims[..] else {
        return Err(io_err("parse", path, format!("expected 2 dims, got {:?}", t.dims)));
    };
    Ok(Heatmap::new(h, w, t.data)?)
}

/// Writes images as one `[n, height, width, channels]` stack; all images
/// must share a shape.
pub fn write_image_stack(path: &Path, images: &[Image]) -> CliResult<()> {
    let first = images
        .first()
        .ok_or_else(|| CliError::runtime("cannot write an empty image stack"))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.height() != h || img.width() != w || img.channels() != c {
            return Err(CliError::runtime("image stack shapes differ"));
        }
        data.extend_from_slice(img.data());
    }
    write(path, &[images.len(), h, w, c], &data)
}

pub fn read_image_stack(path: &Path) -> CliResult<Vec<Image>> {
    let t = read(path)?;
    let [n, h, w, c] = t.dims[..] else {
        return Err(io_err("parse", path, format!("expected 4 dims, got {:?}", t.dims)));
    };
    let stride = h * w * c;
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        images.push(Image::new(h, w, c, t.data[i * stride..(i + 1) * stride].to_vec())?);
    }
    Ok(images)
}
