use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lgcompose::commands::MetricRow;
use lgcompose::files::{Checkpoint, Dataset};
use lgcompose_core::data::SceneSpec;
use lgcompose_core::TrainConfig;
use serde_json::json;
use tempfile::TempDir;

fn tool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgcompose"))
        .args(args)
        .env("TOOL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, value: &serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn toy_spec() -> serde_json::Value {
    json!({
        "height": 7,
        "width": 7,
        "frames": 3,
        "objects": [{"glyph": {"Custom": [[1.0, 1.0], [1.0, 0.0]]}, "start": [2, 1], "step": [0, 1]}]
    })
}

fn toy_config(epochs: usize) -> serde_json::Value {
    json!({"patterns": 1, "transformers": 1, "epochs_max": epochs, "convergence_tol": 0.0, "checkpoint_every": 200})
}

fn gen(dir: &Path, spec: &serde_json::Value) -> PathBuf {
    let spec = write(dir, "spec.json", spec);
    let out = dir.join("data");
    let o = tool(&["gen", "--spec", path_str(&spec), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("dataset.json")
}

#[test]
fn gen_writes_dataset_and_preview() {
    let dir = TempDir::new().unwrap();
    let spec = serde_json::to_value(SceneSpec::orthogonal()).unwrap();
    let data = gen(dir.path(), &spec);
    let ds: Dataset = serde_json::from_str(&fs::read_to_string(&data).unwrap()).unwrap();
    assert_eq!(ds.frames.len(), 8);
    assert!(ds.frames.iter().all(|f| f.len() == 225));
    let pgm = fs::read(dir.path().join("data/preview.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n127 15\n255\n"));
    assert!(dir.path().join("data/manifest.json").exists());
}

#[test]
fn gen_rejects_overlapping_objects() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        &json!({
            "height": 9, "width": 9, "frames": 4,
            "objects": [
                {"glyph": "X", "start": [2, 0], "step": [0, 1]},
                {"glyph": "O", "start": [2, 4], "step": [0, -1]}
            ]
        }),
    );
    let o = tool(&["gen", "--spec", path_str(&spec), "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_missing_spec() {
    let dir = TempDir::new().unwrap();
    let o = tool(&["gen", "--spec", path_str(&dir.path().join("nope.json")), "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no such spec"));
}

#[test]
fn toy_training_run() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &toy_spec());
    let config = write(dir.path(), "config.json", &toy_config(500));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = tool(&["train", "--data", path_str(&data), "--config", path_str(&config), "--out", path_str(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let metrics: Vec<MetricRow> = serde_json::from_str(&fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.len(), 500);
    assert_eq!(metrics.last().unwrap().epoch, 500);
    assert!(metrics.last().unwrap().losses.recon_t_masked < 1e-3);
    assert!(a.join("checkpoints/epoch_000200.json").exists());

    let b = run("b");
    assert_eq!(fs::read(a.join("final.json")).unwrap(), fs::read(b.join("final.json")).unwrap());

    // evaluation of the fitted toy
    let report_dir = dir.path().join("eval");
    let o = tool(&[
        "eval",
        "--ckpt",
        path_str(&a.join("final.json")),
        "--data",
        path_str(&data),
        "--out",
        path_str(&report_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["active_pattern_count"], 1);
    assert!(report_dir.join("fields/transformer_1.svg").exists());
}

#[test]
fn resume_continues_bitwise() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &toy_spec());
    let config = write(dir.path(), "config.json", &toy_config(400));
    let full = dir.path().join("full");
    let o = tool(&["train", "--data", path_str(&data), "--config", path_str(&config), "--out", path_str(&full)]);
    assert!(o.status.success());
    let resumed = dir.path().join("resumed");
    let ckpt = full.join("checkpoints/epoch_000200.json");
    let o = tool(&[
        "train",
        "--data",
        path_str(&data),
        "--config",
        path_str(&config),
        "--out",
        path_str(&resumed),
        "--resume",
        path_str(&ckpt),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(full.join("final.json")).unwrap(), fs::read(resumed.join("final.json")).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &toy_spec());
    let config = write(dir.path(), "config.json", &toy_config(1));
    let out = dir.path().join("run");
    assert!(tool(&["train", "--data", path_str(&data), "--config", path_str(&config), "--out", path_str(&out)]).status.success());
    let text = fs::read_to_string(out.join("final.json")).unwrap();
    let ckpt: Checkpoint = serde_json::from_str(&text).unwrap();
    let state = ckpt.to_state().unwrap();
    let cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    let again = Checkpoint::from_state(&state, &cfg, ckpt.epoch, None);
    assert_eq!(again, ckpt);
    let mut rewritten = serde_json::to_string_pretty(&again).unwrap();
    rewritten.push('\n');
    assert_eq!(rewritten, text);
}

#[test]
fn divergent_learning_rate_exits_numerical() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &toy_spec());
    let config = write(
        dir.path(),
        "config.json",
        &json!({"patterns": 1, "transformers": 1, "epochs_max": 300, "lr_theta": 1e3, "lr_lambda": 1e3}),
    );
    let out = dir.path().join("run");
    let o = tool(&["train", "--data", path_str(&data), "--config", path_str(&config), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("non-finite"), "{stderr}");
    let aborted = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().starts_with("aborted_"));
    assert!(aborted);
}

#[test]
fn eval_rejects_mismatched_dataset() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &toy_spec());
    let config = write(dir.path(), "config.json", &toy_config(1));
    let out = dir.path().join("run");
    assert!(tool(&["train", "--data", path_str(&data), "--config", path_str(&config), "--out", path_str(&out)]).status.success());
    let other = TempDir::new().unwrap();
    let big = gen(other.path(), &serde_json::to_value(SceneSpec::orthogonal()).unwrap());
    let o = tool(&[
        "eval",
        "--ckpt",
        path_str(&out.join("final.json")),
        "--data",
        path_str(&big),
        "--out",
        path_str(&dir.path().join("eval")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn strict_pattern_threshold_limits_active_count() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &serde_json::to_value(SceneSpec::orthogonal()).unwrap());
    let config = write(dir.path(), "config.json", &json!({"epochs_max": 1}));
    let out = dir.path().join("run");
    assert!(tool(&["train", "--data", path_str(&data), "--config", path_str(&config), "--out", path_str(&out)]).status.success());
    let report_dir = dir.path().join("eval");
    let o = tool(&[
        "eval",
        "--ckpt",
        path_str(&out.join("final.json")),
        "--data",
        path_str(&data),
        "--tau-p",
        "0.9",
        "--out",
        path_str(&report_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["active_pattern_count"].as_u64().unwrap() <= 1);
}

#[test]
fn verify_passes() {
    let o = tool(&["verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 10);
}

#[test]
fn verify_catches_truncated_exponential() {
    let o = tool(&["verify", "--corrupt-exponential"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("group-law-additivity"));
}

#[test]
fn verify_filter() {
    let o = tool(&["verify", "--filter", "group-law"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 3);
    assert!(stdout.lines().all(|l| l.contains("group-law")));
}
