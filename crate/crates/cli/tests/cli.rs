//! End-to-end runs of the `ilnet` binary on a tiny synthetic dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &["--override", "input_size=32", "--override", "batch_size=2"];

fn ilnet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilnet"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("ILNET_THREADS", "1")
        .output()
        .expect("spawn ilnet")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = ilnet(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

/// Writes four 32×32 images and returns the manifest path.
fn dataset(root: &Path) -> PathBuf {
    let dir = root.join("data");
    let args = [SMALL, &["--override", "synth_count=4", "synth"]].concat();
    let summary = json(&ok(&dir, &args));
    assert_eq!(summary["count"], 4);
    dir.join("manifest.txt")
}

fn train(root: &Path, manifest: &Path, name: &str, epochs_n: usize) -> PathBuf {
    let out = root.join(name);
    let epochs = format!("epochs={epochs_n}");
    let args = [SMALL, &["--override", &epochs, "train", "--manifest", manifest.to_str().unwrap()]].concat();
    let summary = json(&ok(&out, &args));
    assert_eq!(summary["epochs"], epochs_n);
    out
}

#[test]
fn one_epoch_writes_one_log_row_and_a_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let manifest = dataset(root.path());
    let out = train(root.path(), &manifest, "run", 1);
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(out.join("model.ckpt").is_file());
}

#[test]
fn seeded_runs_are_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let manifest = dataset(root.path());
    let a = train(root.path(), &manifest, "a", 1);
    let b = train(root.path(), &manifest, "b", 1);
    for file in ["loss.csv", "model.ckpt"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn bad_configuration_exits_1_and_missing_input_exits_2() {
    let root = tempfile::tempdir().unwrap();
    let o = ilnet(root.path(), &["--override", "colour=red", "bench"]);
    assert_eq!(o.status.code(), Some(1));
    let o = ilnet(root.path(), &["eval", "--manifest", "missing.txt", "--predictions", "missing.txt"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ilnet(root.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ground_truth_scored_as_predictions_is_perfect() {
    let root = tempfile::tempdir().unwrap();
    let manifest = dataset(root.path());
    let m = manifest.to_str().unwrap();
    let args = [SMALL, &["eval", "--manifest", m, "--predictions", m]].concat();
    let r = json(&ok(&root.path().join("eval"), &args));
    assert_eq!(r["iou"].as_f64(), Some(100.0));
    assert_eq!(r["niou"].as_f64(), Some(100.0));
    assert_eq!(r["pd"].as_f64(), Some(100.0));
    assert_eq!(r["fa"].as_f64(), Some(0.0));
    assert_eq!(r["images"], 4);
}

#[test]
fn roc_rows_start_at_zero_and_false_alarms_grow() {
    let root = tempfile::tempdir().unwrap();
    let manifest = dataset(root.path());
    let run = train(root.path(), &manifest, "run", 1);
    let ck = run.join("model.ckpt");
    let args = [SMALL, &["roc", "--manifest", manifest.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap(), "--thresholds", "3"]].concat();
    let csv = ok(&root.path().join("roc"), &args);
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert_eq!((rows[0][1], rows[0][2]), (0.0, 0.0));
    assert!(rows.windows(2).all(|w| w[1][2] >= w[0][2] && w[1][0] < w[0][0]), "{csv}");
    assert_eq!(rows[2][0], 0.0);

    // inference writes one prediction per image plus a manifest over them
    let args = [SMALL, &["infer", "--manifest", manifest.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()]].concat();
    let infer = root.path().join("infer");
    ok(&infer, &args);
    assert_eq!(std::fs::read_dir(infer.join("pred")).unwrap().count(), 4);
    let predictions = infer.join("predictions.txt");
    let args = [SMALL, &["eval", "--manifest", manifest.to_str().unwrap(), "--predictions", predictions.to_str().unwrap()]].concat();
    let r = json(&ok(&root.path().join("eval"), &args));
    assert!((0.0..=100.0).contains(&r["iou"].as_f64().unwrap()));
}

#[test]
fn bench_reports_the_small_model() {
    let root = tempfile::tempdir().unwrap();
    let r = json(&ok(root.path(), &["--override", "bench_runs=2", "--override", "input_size=64", "bench"]));
    let params = r["params"].as_u64().unwrap();
    assert!((30_000..=60_000).contains(&params), "{params}");
    assert_eq!(r["runs"], 2);
    assert!(r["gflops"].as_f64().unwrap() > 0.0);
    assert!(r["mean_latency_ms"].as_f64().unwrap() > 0.0);
    assert!(root.path().join("bench.json").is_file());
}

#[test]
fn gradcheck_with_flipped_signs_exits_2() {
    let root = tempfile::tempdir().unwrap();
    let o = ilnet(root.path(), &["--override", "gradcheck_flip_sign=true", "--override", "gradcheck_samples=1", "gradcheck"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&std::fs::read_to_string(root.path().join("gradcheck.json")).unwrap());
    assert_eq!(r["passed"], false);
    assert!(r["failed_groups"].as_u64().unwrap() > 0);
}
