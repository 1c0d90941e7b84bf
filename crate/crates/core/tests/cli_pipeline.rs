use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emodistill"))
        .args(args)
        .output()
        .expect("spawn emodistill")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

// Small corpus, mock annotations and a two-epoch model.
fn trained_workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace {
        root: dir.path().to_path_buf(),
        _dir: dir,
    };
    std::fs::write(ws.p("spec.json"), r#"{"n_train": 160, "n_val": 40, "n_test": 40, "seed": 3}"#).unwrap();
    std::fs::write(
        ws.p("config.json"),
        r#"{"epochs": 2, "d": 8, "batch_size": 16, "encoder": {"hidden": 16, "n_layers": 1, "n_heads": 2, "max_len": 32, "ffn_width": 32}, "n_queries": 2, "projector_heads": 2}"#,
    )
    .unwrap();
    ok(&["synth", "--spec", &s(&ws.p("spec.json")), "--out", &s(&ws.p("data"))]);
    ok(&[
        "annotate",
        "--in",
        &s(&ws.p("data/seen.jsonl")),
        "--cache",
        &s(&ws.p("cache.jsonl")),
        "--client",
        "mock",
        "--mock-table",
        &s(&ws.p("data/mock_table.json")),
        "--out",
        &s(&ws.p("annotations.jsonl")),
    ]);
    ok(&[
        "train",
        "--config",
        &s(&ws.p("config.json")),
        "--data",
        &s(&ws.p("data/seen.jsonl")),
        "--annotations",
        &s(&ws.p("annotations.jsonl")),
        "--checkpoint-dir",
        &s(&ws.p("ckpt")),
        "--vocab-labels",
        &s(&ws.p("data/unseen_space.json")),
    ]);
    ws
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let out = bin(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_input_exits_1_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let out = bin(&[
        "evaluate",
        "--model",
        &s(&dir.path().join("nope.json")),
        "--data",
        &s(&dir.path().join("nope.jsonl")),
        "--labels",
        &s(&dir.path().join("nope_space.json")),
        "--out",
        &s(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_path.exists());
}

#[test]
fn synth_writes_every_artifact_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", &s(dir.path()), "--seed", "9"]);
    for f in [
        "seen.jsonl",
        "unseen.jsonl",
        "reference_annotations.jsonl",
        "seen_space.json",
        "unseen_space.json",
        "mock_table.json",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["provenance"]["seed"], 9);
    assert_eq!(manifest["provenance"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn pipeline_calibrate_evaluate_predict_probe() {
    let ws = trained_workspace();
    let model = s(&ws.p("ckpt/best.json"));

    let anns = std::fs::read_to_string(ws.p("annotations.jsonl")).unwrap();
    let reference = std::fs::read_to_string(ws.p("data/reference_annotations.jsonl")).unwrap();
    assert_eq!(anns.lines().count(), 240);
    assert_eq!(
        anns.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()).collect::<Vec<_>>(),
        reference.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()).collect::<Vec<_>>()
    );

    let report = read_json(&ws.p("ckpt/train_report.json"));
    assert_eq!(report["epoch_train_loss"].as_array().unwrap().len(), 2);

    ok(&[
        "calibrate",
        "--model",
        &model,
        "--val",
        &s(&ws.p("data/unseen.jsonl")),
        "--labels",
        &s(&ws.p("data/unseen_space.json")),
        "--out",
        &s(&ws.p("thresholds.json")),
    ]);
    let thresholds = read_json(&ws.p("thresholds.json"));
    let table = thresholds.as_object().unwrap();
    assert_eq!(table.len(), 16);
    for t in table.values() {
        let t = t.as_f64().unwrap();
        assert!(((t * 20.0).round() - t * 20.0).abs() < 1e-9);
    }

    ok(&[
        "evaluate",
        "--model",
        &model,
        "--data",
        &s(&ws.p("data/unseen.jsonl")),
        "--labels",
        &s(&ws.p("data/unseen_space.json")),
        "--thresholds",
        &s(&ws.p("thresholds.json")),
        "--out",
        &s(&ws.p("report.json")),
        "--table",
        &s(&ws.p("report.txt")),
    ]);
    let eval = read_json(&ws.p("report.json"));
    assert_eq!(eval["n_samples"], 40);
    assert!(eval["macro_f1"].as_f64().is_some());
    assert!(std::fs::read_to_string(ws.p("report.txt")).unwrap().contains("macro-F1"));

    ok(&[
        "predict",
        "--model",
        &model,
        "--labels",
        &s(&ws.p("data/unseen_space.json")),
        "--thresholds",
        &s(&ws.p("thresholds.json")),
        "--in",
        &s(&ws.p("data/unseen.jsonl")),
        "--out",
        &s(&ws.p("predictions.jsonl")),
    ]);
    let preds = std::fs::read_to_string(ws.p("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 240);
    let first: Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    assert!(first["id"].is_string());
    assert_eq!(first["scores"].as_object().unwrap().len(), 16);
    assert!(first["prediction"].is_array());

    let targets: Vec<Value> = read_json(&ws.p("data/unseen_space.json"))["labels"].as_array().unwrap()[..2].to_vec();
    std::fs::write(ws.p("targets.json"), serde_json::to_string(&targets).unwrap()).unwrap();
    ok(&[
        "probe",
        "--model",
        &model,
        "--targets",
        &s(&ws.p("targets.json")),
        "--pool",
        &s(&ws.p("annotations.jsonl")),
        "--data",
        &s(&ws.p("data/seen.jsonl")),
        "-k",
        "3",
        "--out",
        &s(&ws.p("neighbors.json")),
    ]);
    let probe = read_json(&ws.p("neighbors.json"));
    assert_eq!(probe["rows"].as_array().unwrap().len(), 2);
    for row in probe["rows"].as_array().unwrap() {
        assert_eq!(row["neighbors"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn ablate_tabulates_each_dimension() {
    let ws = trained_workspace();
    let target = format!("{}={}", s(&ws.p("data/seen_space.json")), s(&ws.p("data/seen.jsonl")));
    ok(&[
        "ablate",
        "--dims",
        "4,8",
        "--config",
        &s(&ws.p("config.json")),
        "--data",
        &s(&ws.p("data/seen.jsonl")),
        "--annotations",
        &s(&ws.p("annotations.jsonl")),
        "--target",
        &target,
        "--out",
        &s(&ws.p("ablation.json")),
    ]);
    let table = read_json(&ws.p("ablation.json"));
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["d"], 4);
    assert_eq!(rows[1]["d"], 8);
}
