//! Model directories: one MPT1 file per parameter tensor plus `manifest.txt`
//! with one "name dim0 dim1 ..." line per tensor, sorted by name. The model
//! kind is inferred from its tensor names: `conv1_w` marks the small CNN,
//! `regions` the region-mean scorer, `weights` the linear scorer.

use std::fs;
use std::path::Path;

use maskexplain_core::blackbox::{
    BlackBox, InputShape, LinearModel, RegionMeanModel, TinyCnn,
};
use maskexplain_core::eval::BoundingBox;
use maskexplain_core::grid::Image;

use crate::error::{io_err, CliError, CliResult};
use crate::mpt;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub enum LoadedModel {
    Cnn(TinyCnn),
    Region(RegionMeanModel),
    Linear(LinearModel),
}

impl LoadedModel {
    pub fn as_blackbox(&self) -> &dyn BlackBox {
        match self {
            LoadedModel::Cnn(m) => m,
            LoadedModel::Region(m) => m,
            LoadedModel::Linear(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Cnn(_) => "cnn",
            LoadedModel::Region(_) => "region",
            LoadedModel::Linear(_) => "linear",
        }
    }
}

fn write_manifest(dir: &Path, tensors: &[(&str, Vec<usize>)]) -> CliResult<()> {
    let mut lines: Vec<String> = tensors
        .iter()
        .map(|(name, dims)| {
            let dims: Vec<String> = dims.iter().map(usize::to_string).collect();
            format!("{name} {}", dims.join(" "))
        })
        .collect();
    lines.sort();
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, lines.join("\n") + "\n").map_err(|e| io_err("write", &path, e))
}

fn read_manifest(dir: &Path) -> CliResult<Vec<(String, Vec<usize>)>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err("read", &path, e))?;
    let mut entries = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| io_err("parse", &path, "blank manifest line"))?
            .to_owned();
        let dims = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|e| io_err("parse", &path, format!("bad dim {p:?}: {e}")))
            })
            .collect::<CliResult<Vec<usize>>>()?;
        entries.push((name, dims));
    }
    Ok(entries)
}

/// Reads the named tensor and checks it against the manifest dims.
fn read_tensor(dir: &Path, name: &str, dims: &[usize]) -> CliResult<mpt::Tensor> {
    let path = dir.join(format!("{name}.mpt1"));
    let t = mpt::read(&path)?;
    if t.dims != dims {
        return Err(io_err(
            "parse",
            &path,
            format!("dims {:?} disagree with the manifest's {dims:?}", t.dims),
        ));
    }
    Ok(t)
}

fn shape_tensor(shape: InputShape) -> Vec<f64> {
    vec![shape.height as f64, shape.width as f64, shape.channels as f64]
}

fn shape_from_tensor(t: &mpt::Tensor) -> CliResult<InputShape> {
    let [h, w, c] = t.data[..] else {
        return Err(CliError::runtime("input_dims tensor must hold 3 values"));
    };
    Ok(InputShape { height: h as usize, width: w as usize, channels: c as usize })
}

pub fn save_tiny_cnn(dir: &Path, model: &TinyCnn) -> CliResult<()> {
    let shape = model.input_shape();
    let classes = model.num_classes();
    let f1 = model.conv1_b().len();
    let f2 = model.conv2_b().len();
    let feat = model.fc_w().len() / classes;
    let dims_data = shape_tensor(shape);
    let tensors: Vec<(&str, Vec<usize>, &[f64])> = vec![
        ("input_dims", vec![3], &dims_data),
        ("conv1_w", vec![f1, shape.channels, 3, 3], model.conv1_w()),
        ("conv1_b", vec![f1], model.conv1_b()),
        ("conv2_w", vec![f2, f1, 3, 3], model.conv2_w()),
        ("conv2_b", vec![f2], model.conv2_b()),
        ("fc_w", vec![classes, feat], model.fc_w()),
        ("fc_b", vec![classes], model.fc_b()),
    ];
    for (name, dims, data) in &tensors {
        mpt::write(&dir.join(format!("{name}.mpt1")), dims, data)?;
    }
    write_manifest(
        dir,
        &tensors.iter().map(|(n, d, _)| (*n, d.clone())).collect::<Vec<_>>(),
    )
}

/// Builds the region-mean scorer from boxes and saves it as a `regions`
/// tensor of `[n, 4]` box corners plus the input dims.
pub fn save_region_model(
    dir: &Path,
    shape: InputShape,
    boxes: &[BoundingBox],
) -> CliResult<RegionMeanModel> {
    let model = RegionMeanModel::from_boxes(shape, boxes)?;
    let mut corners = Vec::with_capacity(boxes.len() * 4);
    for b in boxes {
        corners.extend([b.x0 as f64, b.y0 as f64, b.x1 as f64, b.y1 as f64]);
    }
    mpt::write(&dir.join("regions.mpt1"), &[boxes.len(), 4], &corners)?;
    mpt::write(&dir.join("input_dims.mpt1"), &[3], &shape_tensor(shape))?;
    write_manifest(
        dir,
        &[("input_dims", vec![3]), ("regions", vec![boxes.len(), 4])],
    )?;
    Ok(model)
}

pub fn save_linear_model(dir: &Path, model: &LinearModel) -> CliResult<()> {
    let w = model.weights();
    mpt::write_image(&dir.join("weights.mpt1"), w)?;
    mpt::write(&dir.join("bias.mpt1"), &[1], &[model.bias()])?;
    write_manifest(
        dir,
        &[
            ("weights", vec![w.height(), w.width(), w.channels()]),
            ("bias", vec![1]),
        ],
    )
}

pub fn load_model(dir: &Path) -> CliResult<LoadedModel> {
    let manifest = read_manifest(dir)?;
    let dims_of = |name: &str| -> CliResult<&Vec<usize>> {
        manifest
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| {
                CliError::runtime(format!(
                    "model at {} has no \"{name}\" tensor",
                    dir.display()
                ))
            })
    };
    let has = |name: &str| manifest.iter().any(|(n, _)| n == name);

    if has("conv1_w") {
        let shape = shape_from_tensor(&read_tensor(dir, "input_dims", dims_of("input_dims")?)?)?;
        let fc_b = read_tensor(dir, "fc_b", dims_of("fc_b")?)?;
        let classes = fc_b.data.len();
        let model = TinyCnn::from_parts(
            shape,
            classes,
            read_tensor(dir, "conv1_w", dims_of("conv1_w")?)?.data,
            read_tensor(dir, "conv1_b", dims_of("conv1_b")?)?.data,
            read_tensor(dir, "conv2_w", dims_of("conv2_w")?)?.data,
            read_tensor(dir, "conv2_b", dims_of("conv2_b")?)?.data,
            read_tensor(dir, "fc_w", dims_of("fc_w")?)?.data,
            fc_b.data,
        )?;
        return Ok(LoadedModel::Cnn(model));
    }
    if has("regions") {
        let shape = shape_from_tensor(&read_tensor(dir, "input_dims", dims_of("input_dims")?)?)?;
        let t = read_tensor(dir, "regions", dims_of("regions")?)?;
        if t.dims.len() != 2 || t.dims[1] != 4 {
            return Err(CliError::runtime("regions tensor must be [n, 4]"));
        }
        let boxes: Vec<BoundingBox> = t
            .data
            .chunks_exact(4)
            .map(|c| BoundingBox::new(c[0] as usize, c[1] as usize, c[2] as usize, c[3] as usize))
            .collect();
        return Ok(LoadedModel::Region(RegionMeanModel::from_boxes(shape, &boxes)?));
    }
    if has("weights") {
        let wd = dims_of("weights")?.clone();
        if wd.len() != 3 {
            return Err(CliError::runtime("weights tensor must be [h, w, c]"));
        }
        let w = read_tensor(dir, "weights", &wd)?;
        let bias = read_tensor(dir, "bias", dims_of("bias")?)?;
        let weights = Image::new(wd[0], wd[1], wd[2], w.data)?;
        return Ok(LoadedModel::Linear(LinearModel::new(weights, bias.data[0])?));
    }
    Err(CliError::runtime(format!(
        "model at {} has no recognizable tensors (conv1_w, regions, or weights)",
        dir.display()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_cnn_round_trips_to_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let shape = InputShape { height: 8, width: 8, channels: 1 };
        let model = TinyCnn::new_random(shape, 3, 5).unwrap();
        save_tiny_cnn(dir.path(), &model).unwrap();
        let LoadedModel::Cnn(back) = load_model(dir.path()).unwrap() else {
            panic!("kind inference failed");
        };
        assert_eq!(back.input_shape(), shape);
        assert_eq!(back.num_classes(), 3);
        for (a, b) in back.fc_w().iter().zip(model.fc_w()) {
            assert!((a - b).abs() <= f32::EPSILON as f64 * b.abs().max(1.0));
        }
        // Scores of the reloaded model stay close to the original's.
        let x = Image::constant(8, 8, 1, 0.5);
        let sa = model.score(&x).unwrap();
        let sb = back.score(&x).unwrap();
        for (a, b) in sa.iter().zip(&sb) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn region_model_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let shape = InputShape { height: 16, width: 16, channels: 1 };
        let boxes = [BoundingBox::new(2, 3, 7, 9), BoundingBox::new(10, 1, 16, 4)];
        let model = save_region_model(dir.path(), shape, &boxes).unwrap();
        let LoadedModel::Region(back) = load_model(dir.path()).unwrap() else {
            panic!("kind inference failed");
        };
        assert_eq!(back.regions(), model.regions());
        assert_eq!(back.input_shape(), shape);
    }

    #[test]
    fn linear_model_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let weights = Image::new(2, 2, 1, vec![0.5, -1.0, 0.25, 2.0]).unwrap();
        let model = LinearModel::new(weights, 0.125).unwrap();
        save_linear_model(dir.path(), &model).unwrap();
        let LoadedModel::Linear(back) = load_model(dir.path()).unwrap() else {
            panic!("kind inference failed");
        };
        assert_eq!(back.weights(), model.weights());
        assert_eq!(back.bias(), model.bias());
        assert_eq!(load_model(dir.path()).unwrap().kind(), "linear");
    }

    #[test]
    fn manifests_keep_tensors_honest() {
        let dir = tempfile::tempdir().unwrap();
        let weights = Image::new(2, 2, 1, vec![0.5, -1.0, 0.25, 2.0]).unwrap();
        save_linear_model(dir.path(), &LinearModel::new(weights, 0.0).unwrap()).unwrap();
        // Corrupt the tensor so its dims disagree with the manifest.
        mpt::write(&dir.path().join("weights.mpt1"), &[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(load_model(dir.path()).is_err());
        std::fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(load_model(dir.path()).is_err());
    }
}
