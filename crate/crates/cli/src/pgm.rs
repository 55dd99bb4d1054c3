//! Binary PGM (P5, 8-bit) export of heatmaps: values are the normalized map
//! scaled to 255 and rounded, so the hottest pixel is always white unless
//! the map is constant.

use std::fs;
use std::path::Path;

use maskexplain_core::grid::{normalize_heatmap, Heatmap};

use crate::error::{io_err, CliResult};

pub fn write_pgm(path: &Path, h: &Heatmap) -> CliResult<()> {
    let normalized = normalize_heatmap(h);
    let mut bytes = format!("P5\n{} {}\n255\n", h.width(), h.height()).into_bytes();
    bytes.extend(normalized.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    fs::write(path, bytes).map_err(|e| io_err("write", path, e))
}
