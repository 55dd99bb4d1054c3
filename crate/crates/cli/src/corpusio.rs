//! Corpus directories: `images.mpt1` holding an `[n, h, w, c]` stack and
//! `labels.csv` with columns `index,label,x0,y0,x1,y1`.

use std::path::Path;

use maskexplain_core::blackbox::ShapeCorpus;
use maskexplain_core::eval::BoundingBox;

use crate::csvio;
use crate::error::{io_err, CliResult};
use crate::mpt;

pub const IMAGES_FILE: &str = "images.mpt1";
pub const LABELS_FILE: &str = "labels.csv";
const LABELS_HEADER: &str = "index,label,x0,y0,x1,y1";

pub fn write_corpus(dir: &Path, corpus: &ShapeCorpus) -> CliResult<()> {
    mpt::write_image_stack(&dir.join(IMAGES_FILE), corpus.images())?;
    let rows: Vec<String> = (0..corpus.len())
        .map(|i| {
            let b = corpus.bbox(i);
            format!("{i},{},{},{},{},{}", corpus.label(i), b.x0, b.y0, b.x1, b.y1)
        })
        .collect();
    csvio::write_csv(&dir.join(LABELS_FILE), LABELS_HEADER, &rows)
}

pub fn read_corpus(dir: &Path) -> CliResult<ShapeCorpus> {
    let images = mpt::read_image_stack(&dir.join(IMAGES_FILE))?;
    let labels_path = dir.join(LABELS_FILE);
    let (header, rows) = csvio::read_csv(&labels_path)?;
    if header.join(",") != LABELS_HEADER {
        return Err(io_err("parse", &labels_path, format!("unexpected header {header:?}")));
    }
    let mut labels = Vec::with_capacity(rows.len());
    let mut boxes = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let fail = |why: String| io_err("parse", &labels_path, format!("row {}: {why}", i + 1));
        if row.len() != 6 {
            return Err(fail(format!("expected 6 fields, got {}", row.len())));
        }
        let mut nums = [0usize; 6];
        for (slot, field) in nums.iter_mut().zip(row) {
            *slot = field.parse().map_err(|e| fail(format!("bad number {field:?}: {e}")))?;
        }
        if nums[0] != i {
            return Err(fail(format!("index {} out of order", nums[0])));
        }
        if nums[4] <= nums[2] || nums[5] <= nums[3] {
            return Err(fail("degenerate bounding box".into()));
        }
        labels.push(nums[1]);
        boxes.push(BoundingBox::new(nums[2], nums[3], nums[4], nums[5]));
    }
    Ok(ShapeCorpus::new(images, labels, boxes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use maskexplain_core::blackbox::generate_shape_corpus;

    #[test]
    fn corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_shape_corpus(7, 42).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.labels(), corpus.labels());
        assert_eq!(back.boxes(), corpus.boxes());
        assert_eq!(back.len(), corpus.len());
        // Pixels pass through an f32 cast; verify to that precision.
        for i in 0..corpus.len() {
            for (a, b) in back.image(i).data().iter().zip(corpus.image(i).data()) {
                assert!((a - b).abs() <= f32::EPSILON as f64 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn out_of_order_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_shape_corpus(2, 1).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let labels = dir.path().join(LABELS_FILE);
        let text = std::fs::read_to_string(&labels).unwrap();
        let swapped: Vec<&str> = text.lines().collect();
        std::fs::write(&labels, format!("{}\n{}\n{}\n", swapped[0], swapped[2], swapped[1]))
            .unwrap();
        assert!(read_corpus(dir.path()).is_err());
    }
}
