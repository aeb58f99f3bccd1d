use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vssdet::io::load_corpus;
use vssdet::model::{read_checkpoint, write_checkpoint, ModelCheckpoint, ModelConfig, Network, TrainingFingerprint};
use vssdet::pipeline::{evaluate_corpus, EvalConfig, OraclePredictor};

fn vssdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vssdet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

const SMALL_SPEC: &str = r#"{
  "grid_dims": [32, 32, 32], "spacing_mm": 1.0, "n_lesions": 2,
  "lesion_radius_range_vox": [1.5, 3.0], "n_vessels": 2, "vessel_radius_range_vox": [1.0, 1.5],
  "lesion_intensity": 1.0, "vessel_intensity": 1.0, "background_intensity": 0.0,
  "noise_sigma": 0.2, "bias_amplitude": 0.1, "growth_factor_range": [1.2, 1.5],
  "registration_jitter": {"max_translation_vox": 1.0, "max_rotation_deg": 1.0},
  "n_timepoints": 2, "seed": 5
}"#;

/// Writes a small corpus and returns its manifest path.
fn small_corpus(dir: &Path, n: &str) -> PathBuf {
    let spec = dir.join("spec.json");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let out = dir.join("corpus");
    let r = vssdet(&["phantom", "--spec", s(&spec), "--out", s(&out), "--n-patients", n]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out.join("manifest.json")
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn phantom_is_deterministic_and_allows_empty_corpora() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_corpus(a.path(), "2");
    small_corpus(b.path(), "2");
    let (ta, tb) = (tree(&a.path().join("corpus")), tree(&b.path().join("corpus")));
    assert_eq!(ta.len(), 9);
    assert_eq!(ta, tb);

    let empty = small_corpus(a.path(), "0");
    assert_eq!(read_json(&empty)["patients"], Value::Array(vec![]));
}

#[test]
fn phantom_rejects_bad_spec_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, SMALL_SPEC.replace("[32, 32, 32]", "[8, 8, 8]")).unwrap();
    let r = vssdet(&["phantom", "--spec", s(&spec), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("grid_dims"));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(dir.path(), "1");
    let ckpt = dir.path().join("m.ckpt");
    let r = vssdet(&["train", "--manifest", s(&manifest), "--alpha", "1.5", "--out", s(&ckpt)]);
    assert_eq!(code(&r), 1);
    let r = vssdet(&["eval", "--manifest", s(&manifest), "--report", "r.json"]);
    assert_eq!(code(&r), 1);
    let missing = dir.path().join("nope.json");
    let r = vssdet(&["eval", "--manifest", s(&missing), "--baseline", "zero", "--report", "r.json"]);
    assert_eq!(code(&r), 2);
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let report = dir.path().join("r.json");
    let r = vssdet(&["eval", "--manifest", s(&manifest), "--ckpt", s(&ckpt), "--report", s(&report)]);
    assert_eq!(code(&r), 2);
    assert_eq!(code(&vssdet(&["--help"])), 0);
}

#[test]
fn eval_baselines_match_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(dir.path(), "2");
    let report = dir.path().join("oracle.json");
    let r = vssdet(&[
        "eval", "--manifest", s(&manifest), "--baseline", "oracle", "--report", s(&report), "--tile-size", "8",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let got = read_json(&report);
    assert_eq!(got["lesion"]["sensitivity"], 1.0);
    assert_eq!(got["lesion"]["precision"], 1.0);

    let corpus = load_corpus(&manifest).unwrap();
    let config = EvalConfig {
        tile_size: 8,
        ..EvalConfig::default()
    };
    let direct = evaluate_corpus(&OraclePredictor, &corpus, &config).unwrap();
    assert_eq!(got, serde_json::to_value(&direct).unwrap());

    let table2 = fs::read_to_string(dir.path().join("oracle.table2.csv")).unwrap();
    assert!(table2.starts_with("model,sensitivity,precision,fp,mdsc\n"));
    assert!(dir.path().join("oracle.table1.csv").exists());

    let zero = dir.path().join("zero.json");
    let r = vssdet(&["eval", "--manifest", s(&manifest), "--baseline", "zero", "--report", s(&zero)]);
    assert_eq!(code(&r), 0);
    assert_eq!(read_json(&zero)["lesion"]["sensitivity"], 0.0);
}

#[test]
fn train_smoke_records_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(dir.path(), "2");
    let ckpt = dir.path().join("m.ckpt");
    let r = vssdet(&[
        "train", "--manifest", s(&manifest), "--loss", "jvss", "--alpha", "0.995", "--epochs", "1",
        "--segments-per-epoch", "16", "--batch-size", "8", "--out", s(&ckpt),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let c = read_checkpoint(&ckpt).unwrap();
    assert_eq!(c.fingerprint.alpha, Some(0.995));
    assert_eq!(c.fingerprint.loss, "jvss");
    assert_eq!(read_json(&dir.path().join("m.log.json"))["epochs"].as_array().unwrap().len(), 1);
}

/// A desk network whose output is a constant probability.
fn constant_checkpoint(path: &Path, logit: f32) {
    let mut net = Network::new(ModelConfig::desk()).unwrap();
    let p = net.parameters_mut();
    p.fill(0.0);
    *p.last_mut().unwrap() = logit;
    let fp = TrainingFingerprint {
        loss: "bce".into(),
        alpha: None,
        epsilon: None,
        epochs: 0,
        seed: 0,
    };
    write_checkpoint(&ModelCheckpoint::from_network(&net, fp), path).unwrap();
}

#[test]
fn ensemble_tags_follow_the_members() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(dir.path(), "1");
    let (on, off) = (dir.path().join("on.ckpt"), dir.path().join("off.ckpt"));
    constant_checkpoint(&on, 5.0);
    constant_checkpoint(&off, -5.0);

    let out = dir.path().join("same");
    let r = vssdet(&[
        "ensemble", "--ckpt-sens", s(&on), "--ckpt-spec", s(&on), "--manifest", s(&manifest), "--out", s(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let q = read_json(&out.join("review_queue.json"));
    assert_eq!(q["total_candidates"], 0);
    assert_eq!(q["total_confirmed"], 2);
    assert!(out.join("patient-000").join("t1_union.vxg").exists());

    let out = dir.path().join("zero_spec");
    let r = vssdet(&[
        "ensemble", "--ckpt-sens", s(&on), "--ckpt-spec", s(&off), "--manifest", s(&manifest), "--out", s(&out),
    ]);
    assert_eq!(code(&r), 0);
    let q = read_json(&out.join("review_queue.json"));
    assert_eq!(q["total_confirmed"], 0);
    assert_eq!(q["total_candidates"], 2);
    let rows = read_json(&out.join("patient-000").join("t0_components.json"));
    assert!(rows.as_array().unwrap().iter().all(|c| c["tag"] == "candidate" && c["source"] == "sens"));
}

#[test]
fn curves_write_csv_json_and_png() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_corpus(dir.path(), "1");
    let prefix = dir.path().join("roc");
    let r = vssdet(&[
        "curves", "--mode", "roc", "--manifest", s(&manifest), "--baseline", "oracle", "--tile-size", "8",
        "--out", s(&prefix),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(String::from_utf8_lossy(&r.stdout).trim(), "auc,1.0000");
    for ext in ["csv", "json", "png"] {
        let len = fs::metadata(dir.path().join(format!("roc.{ext}"))).unwrap().len();
        assert!(len > 0, "{ext} is empty");
    }

    let mut reports = Vec::new();
    for b in ["oracle", "zero"] {
        let p = dir.path().join(format!("{b}.json"));
        assert_eq!(code(&vssdet(&["eval", "--manifest", s(&manifest), "--baseline", b, "--report", s(&p)])), 0);
        reports.push(p);
    }
    let pr = dir.path().join("pr");
    let r = vssdet(&["curves", "--mode", "pr", "--out", s(&pr), "--reports", s(&reports[0]), s(&reports[1])]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(read_json(&dir.path().join("pr.json"))["points"].as_array().unwrap().len(), 2);
    let r = vssdet(&["curves", "--mode", "pr", "--out", s(&pr), "--reports", s(&reports[0])]);
    assert_eq!(code(&r), 2);
}
