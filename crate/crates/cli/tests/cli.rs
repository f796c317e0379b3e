use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use connectome_core::dataio::{self, read_json, read_manifest};
use connectome_core::preprocess::MotionTrace;
use serde_json::{json, Value};

struct Run {
    code: i32,
    stderr: String,
}

impl Run {
    fn error_json(&self) -> Value {
        let line = self.stderr.lines().rev().find(|l| l.starts_with("{\"error\"")).unwrap_or_else(|| panic!("no error JSON in {}", self.stderr));
        serde_json::from_str(line).unwrap()
    }
}

fn connectome(out: &Path, args: &[&str]) -> Run {
    let o = Command::new(env!("CARGO_BIN_EXE_connectome"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    Run { code: o.status.code().unwrap_or(-1), stderr: String::from_utf8_lossy(&o.stderr).into_owned() }
}

fn write_config(dir: &Path, v: Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn tiny_config(per_group: usize, prefix: &str) -> Value {
    json!({
        "seed": 11,
        "synth": {
            "dims": [8, 8, 8], "rois": 4, "frames": 120, "planted_edges": [[0, 1]],
            "delta": 0.8, "subjects_per_group": per_group, "id_prefix": prefix
        },
        "evaluation": {"folds": 3},
        "models": {
            "cnn": {"conv_channels": [2, 4], "dense_hidden": [4],
                    "train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.01, "momentum": 0.9, "seed": 0}},
            "fcn": {"hidden": [8, 4],
                    "train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.01, "momentum": 0.9, "seed": 0}},
            "ridge": {"values": [0.1, 1.0]},
            "svm_l2": {"values": [0.5, 5.0]},
            "svm_l1": {"values": [0.5, 5.0]}
        },
        "saliency": {"top_k": 5}
    })
}

fn ok(out: &Path, cfg: &Path, args: &[&str]) {
    let mut a = vec!["--config", cfg.to_str().unwrap()];
    a.extend_from_slice(args);
    let r = connectome(out, &a);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut m = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                m.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    m
}

#[test]
fn help_and_version_exit_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(connectome(d.path(), &["--help"]).code, 0);
    assert_eq!(connectome(d.path(), &["--version"]).code, 0);
}

#[test]
fn bad_arguments_are_validation_errors() {
    let d = tempfile::tempdir().unwrap();
    let r = connectome(d.path(), &["train", "--family", "lasso"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.error_json()["error"]["kind"], "validation");
    let r = connectome(d.path(), &["frobnicate"]);
    assert_eq!(r.code, 1);
}

#[test]
fn unknown_config_keys_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), json!({"seed": 1, "modles": {}}));
    let r = connectome(d.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(r.code, 1);
    let e = r.error_json();
    assert_eq!(e["error"]["exit_code"], 1);
    assert!(e["error"]["message"].as_str().unwrap().contains("modles"));
}

#[test]
fn invalid_values_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), json!({"evaluation": {"folds": 1}}));
    assert_eq!(connectome(d.path(), &["--config", cfg.to_str().unwrap(), "synth"]).code, 1);
    assert_eq!(connectome(d.path(), &["--threads", "0", "synth"]).code, 1);
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let d = tempfile::tempdir().unwrap();
    let r = connectome(d.path(), &["preprocess", "--manifest", "/nonexistent/manifest.json", "--atlas", "/nonexistent/a.cvol"]);
    assert_ne!(r.code, 0);
    let e = r.error_json();
    assert!(e["error"]["message"].is_string());
}

#[test]
fn verify_passes_and_sign_flip_exits_three() {
    let d = tempfile::tempdir().unwrap();
    let r = connectome(d.path(), &["--seed", "3", "verify"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: Value = read_json(&d.path().join("verify/report.json")).unwrap();
    assert_eq!(report["passed"], true);
    let r = connectome(d.path(), &["--seed", "3", "verify", "--inject-fault", "sign-flip"]);
    assert_eq!(r.code, 3);
    assert_eq!(r.error_json()["error"]["kind"], "verification");
}

#[test]
fn preprocess_isolates_missing_motion_files() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), tiny_config(3, "sub"));
    ok(d.path(), &cfg, &["synth"]);
    std::fs::remove_file(d.path().join("synth/subjects/sub-0002_motion.txt")).unwrap();
    let r = connectome(d.path(), &["--config", cfg.to_str().unwrap(), "preprocess"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    let table: Vec<Value> = read_json(&d.path().join("preprocess/qc_table.json")).unwrap();
    assert_eq!(table.len(), 6);
    for row in &table {
        let expect = if row["subject_id"] == "sub-0002" { "error" } else { "ok" };
        assert_eq!(row["status"], expect, "{row}");
    }
    let m = read_manifest(&d.path().join("preprocess/manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 5);
    assert!(m.entries.iter().all(|e| e.subject_id != "sub-0002"));
    assert!(d.path().join("preprocess/sub-0003_clean.cvol").exists());
}

#[test]
fn qc_failures_are_listed_and_excluded() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), tiny_config(3, "sub"));
    ok(d.path(), &cfg, &["synth"]);
    // a 1 mm jump every third frame scrubs every frame
    let frames: Vec<[f64; 6]> = (0..120).map(|t| [if t % 3 == 0 { 1.0 } else { 0.0 }, 0.0, 0.0, 0.0, 0.0, 0.0]).collect();
    dataio::write_motion(&MotionTrace::new(frames).unwrap(), &d.path().join("synth/subjects/sub-0001_motion.txt")).unwrap();
    ok(d.path(), &cfg, &["preprocess"]);
    let table: Vec<Value> = read_json(&d.path().join("preprocess/qc_table.json")).unwrap();
    let failed: Vec<&Value> = table.iter().filter(|r| r["status"] == "qc_failed").collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["subject_id"], "sub-0001");
    assert_eq!(failed[0]["qc"]["retained"], false);
    let m = read_manifest(&d.path().join("preprocess/manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 5);
    assert!(!d.path().join("preprocess/sub-0001_clean.cvol").exists());
}

#[test]
fn fingerprint_writes_one_pair_per_subject_and_atlas() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), tiny_config(2, "sub"));
    ok(d.path(), &cfg, &["synth"]);
    ok(d.path(), &cfg, &["preprocess"]);
    ok(d.path(), &cfg, &["fingerprint"]);
    let first = tree(&d.path().join("fingerprint"));
    for atlas in ["synth_a", "synth_b"] {
        let fps = first.keys().filter(|p| p.starts_with(atlas) && p.to_string_lossy().ends_with("_fp.cvol")).count();
        let mats = first.keys().filter(|p| p.starts_with(atlas) && p.to_string_lossy().ends_with("_matrix.json")).count();
        assert_eq!((fps, mats), (4, 4), "{atlas}");
        let m = read_manifest(&d.path().join("fingerprint").join(atlas).join("manifest.json")).unwrap();
        assert_eq!(m.entries.len(), 4);
        let (vol, extras) = dataio::read_multichannel::<f32>(&m.resolve(m.entries[0].fingerprint_path.as_deref().unwrap())).unwrap();
        assert_eq!(vol.channels(), 4);
        assert_eq!(extras.atlas_id.as_deref(), Some(atlas));
        assert_eq!(extras.root_seed, Some(11));
        assert_eq!(extras.channel_labels.map(|l| l.len()), Some(4));
    }
    ok(d.path(), &cfg, &["fingerprint"]);
    assert!(first == tree(&d.path().join("fingerprint")), "re-running fingerprint changed its outputs");
}

#[test]
fn train_test_ensemble_saliency_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let train_dir = d.path().join("train_run");
    let hold_dir = d.path().join("holdout_run");
    let cfg = write_config(d.path(), tiny_config(4, "sub"));
    for s in [&["synth"][..], &["preprocess"], &["fingerprint"], &["cv"], &["train"], &["saliency"]] {
        ok(&train_dir, &cfg, s);
    }
    ok(&train_dir, &cfg, &["ensemble", "--stage", "cv"]);

    std::fs::create_dir_all(&hold_dir).unwrap();
    let mut hold = tiny_config(3, "hold");
    hold["seed"] = json!(12);
    let hold_cfg = write_config(&hold_dir, hold);
    for s in [&["synth"][..], &["preprocess"], &["fingerprint"]] {
        ok(&hold_dir, &hold_cfg, s);
    }
    ok(&train_dir, &cfg, &["test", "--test-dir", hold_dir.to_str().unwrap()]);
    ok(&train_dir, &cfg, &["ensemble", "--stage", "test"]);

    for fam in ["cnn", "fcn", "ridge", "svm_l2", "svm_l1"] {
        for atlas in ["synth_a", "synth_b"] {
            let cv: Value = read_json(&train_dir.join(format!("cv/{fam}/{atlas}/report.json"))).unwrap();
            assert_eq!(cv["subjects"].as_array().unwrap().len(), 8);
            assert_eq!(cv["notes"]["root_seed"], 11);
            assert!(train_dir.join(format!("train/{fam}/{atlas}/model.json")).exists());
            let t: Value = read_json(&train_dir.join(format!("test/{fam}/{atlas}/report.json"))).unwrap();
            assert_eq!(t["protocol"], "holdout");
            assert_eq!(t["subjects"].as_array().unwrap().len(), 6);
        }
        let e: Value = read_json(&train_dir.join(format!("ensemble/test/{fam}/report.json"))).unwrap();
        assert_eq!(e["protocol"], "ensemble");
        assert!(train_dir.join(format!("ensemble/cv/{fam}/report_roc.csv")).exists());
    }
    let cv_ridge: Value = read_json(&train_dir.join("cv/ridge/synth_a/report.json")).unwrap();
    assert_eq!(cv_ridge["protocol"], "optimistic-cv");
    assert!(train_dir.join("train/cnn/synth_a/history.csv").exists());
    for atlas in ["synth_a", "synth_b"] {
        let s = train_dir.join("saliency").join(atlas);
        assert!(s.join("group.cvol").exists());
        let top = std::fs::read_to_string(s.join("group_top.csv")).unwrap();
        assert_eq!(top.lines().count(), 6);
        assert_eq!(std::fs::read_dir(s.join("subjects")).unwrap().count(), 8 * 3);
    }

    // scoring the training data against its own checkpoints is refused
    let r = connectome(&train_dir, &["--config", cfg.to_str().unwrap(), "test", "--test-dir", train_dir.to_str().unwrap(), "--family", "ridge"]);
    assert_ne!(r.code, 0);
    assert_eq!(r.error_json()["error"]["kind"], "subject_overlap");
}

#[test]
fn f64_precision_runs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), tiny_config(3, "sub"));
    for s in [&["synth"][..], &["--precision", "f64", "preprocess"], &["--precision", "f64", "fingerprint"]] {
        ok(d.path(), &cfg, s);
    }
    ok(d.path(), &cfg, &["--precision", "f64", "cv", "--family", "ridge", "--family", "cnn", "--atlas-id", "synth_a"]);
    let (_, extras) = dataio::read_multichannel::<f64>(&d.path().join("fingerprint/synth_a/sub-0000_fp.cvol")).unwrap();
    assert_eq!(extras.atlas_id.as_deref(), Some("synth_a"));
}
