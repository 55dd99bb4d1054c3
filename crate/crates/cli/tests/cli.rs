//! End-to-end checks of the binary: exit codes, determinism, and a small
//! pipeline pass over every subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn maskexplain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskexplain"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> Output {
    let out = maskexplain(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exits normally")
}

/// File name -> bytes for every regular file directly inside `dir`.
fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("directory listing") {
        let entry = entry.expect("directory entry");
        if entry.file_type().expect("file type").is_file() {
            map.insert(
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).expect("file bytes"),
            );
        }
    }
    map
}

#[test]
fn unknown_flags_exit_with_the_usage_code() {
    let out = maskexplain(&["synth", "--bogus", "1"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn missing_subcommands_exit_with_the_usage_code() {
    let out = maskexplain(&[]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn zero_count_synth_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("c");
    let out = maskexplain(&["synth", "--n", "0", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn a_missing_corpus_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("m");
    let out = maskexplain(&[
        "train",
        "--corpus",
        tmp.path().join("nope").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn synth_runs_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        run_ok(&["synth", "--n", "6", "--seed", "9", "--out", dir.to_str().unwrap()]);
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn the_full_pipeline_runs_on_a_tiny_corpus() {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("corpus");
    let model = tmp.path().join("model");
    let explained = tmp.path().join("explained");
    let sal = tmp.path().join("sal");
    let evald = tmp.path().join("evald");
    let meta = tmp.path().join("meta");
    let path = |p: &Path| p.to_str().unwrap().to_string();

    run_ok(&["synth", "--n", "8", "--seed", "3", "--out", &path(&corpus)]);
    assert!(corpus.join("images.mpt1").is_file());
    assert!(corpus.join("labels.csv").is_file());

    run_ok(&[
        "train",
        "--corpus",
        &path(&corpus),
        "--epochs",
        "1",
        "--seed",
        "1",
        "--out",
        &path(&model),
    ]);
    assert!(model.join("manifest.txt").is_file());
    assert!(model.join("train_log.csv").is_file());

    run_ok(&[
        "explain",
        "--model",
        &path(&model),
        "--corpus",
        &path(&corpus),
        "--index",
        "0",
        "--iters",
        "2",
        "--out",
        &path(&explained),
    ]);
    for f in ["config.txt", "mask.mpt1", "upsampled_mask.mpt1", "saliency.mpt1", "saliency.pgm", "trace.csv", "meta.txt", "heatmap_0.mpt1"]
    {
        assert!(explained.join(f).is_file(), "explain output {f} missing");
    }
    let trace = std::fs::read_to_string(explained.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4, "header plus iters+1 rows");

    run_ok(&[
        "saliency",
        "--model",
        &path(&model),
        "--corpus",
        &path(&corpus),
        "--index",
        "1",
        "--method",
        "grad",
        "--out",
        &path(&sal),
    ]);
    assert!(sal.join("saliency.pgm").is_file());
    assert!(sal.join("heatmap_1.mpt1").is_file());

    run_ok(&[
        "eval",
        "--model",
        &path(&model),
        "--corpus",
        &path(&corpus),
        "--heatmaps",
        &path(&explained),
        "--protocol",
        "localization",
        "--alphas",
        "0.2,0.5",
        "--schemes",
        "value",
        "--out",
        &path(&evald),
    ]);
    for f in ["records.csv", "summary.csv", "best.csv"] {
        assert!(evald.join(f).is_file(), "eval output {f} missing");
    }
    let records = std::fs::read_to_string(evald.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 3, "header plus one row per alpha");

    run_ok(&[
        "meta",
        "--model",
        &path(&model),
        "--corpus",
        &path(&corpus),
        "--rule",
        "q1",
        "--class",
        "0",
        "--out",
        &path(&meta),
    ]);
    let report = std::fs::read_to_string(meta.join("meta.csv")).unwrap();
    assert!(report.starts_with("rule,theta,epsilon,n,error\nq1,"));
}

#[test]
fn explain_rejects_conflicting_image_sources() {
    let tmp = TempDir::new().unwrap();
    let out = maskexplain(&[
        "explain",
        "--model",
        "m",
        "--image",
        "x.mpt1",
        "--corpus",
        "c",
        "--index",
        "0",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}
