mod common;

use std::path::Path;
use std::process::Command;

fn rastp() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rastp"));
    c.env("RUST_LOG", "warn");
    c
}

fn metrics_without_timing(dir: &Path) -> serde_json::Value {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    let test = v["test"].as_object_mut().unwrap();
    test.remove("wall_step_ms");
    // strategy and rho legitimately differ between the two runs
    let obj = v.as_object_mut().unwrap();
    obj.remove("strategy");
    obj.remove("rho");
    v
}

#[test]
fn missing_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let out = rastp()
        .args(["run", "--config"])
        .arg(&missing)
        .arg("--out-dir")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, common::TINY).unwrap();
    let out = rastp()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path().join("o"))
        .args(["--learning-rate", "0.1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identity_pruning_gives_identical_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, common::TINY).unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(name);
        let st = rastp()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(&out_dir)
            .args(extra)
            .status()
            .unwrap();
        assert!(st.success());
        out_dir
    };
    let a = run("none", &["--strategy", "none"]);
    let b = run("full", &["--strategy", "rastp", "--rho", "1.0"]);
    assert_eq!(metrics_without_timing(&a), metrics_without_timing(&b));
    assert_eq!(
        std::fs::read(a.join("checkpoint.bin")).unwrap(),
        std::fs::read(b.join("checkpoint.bin")).unwrap()
    );
    for f in ["config.toml", "split_manifest.json", "codebooks.bin", "run_log.jsonl", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
}

#[test]
fn synth_tokenize_sweep_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, common::TINY).unwrap();
    let d = dir.path();
    assert!(rastp().args(["synth", "--config"]).arg(&cfg).arg("--out-dir").arg(d.join("s")).status().unwrap().success());
    assert!(d.join("s/interactions.tsv").exists());

    // run on the files written by synth
    let ingest = [
        "--interactions",
        d.join("s/interactions.tsv").to_str().unwrap(),
        "--embeddings",
        d.join("s/embeddings.txt").to_str().unwrap(),
    ]
    .map(String::from);
    assert!(rastp().args(["tokenize", "--config"]).arg(&cfg).arg("--out-dir").arg(d.join("t")).args(&ingest).status().unwrap().success());
    assert!(d.join("t/sid_index.json").exists());

    let st = rastp()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(d.join("w"))
        .args(["--axis", "rho", "--values", "0.5,1.0", "--seeds", "1,2"])
        .status()
        .unwrap();
    assert!(st.success());
    let out = rastp()
        .args(["report", "--out"])
        .arg(d.join("long.csv"))
        .arg(d.join("w/sweep.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("long.csv").exists());

    // bad axis value fails before any training
    let out = rastp()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(d.join("x"))
        .args(["--axis", "strategy", "--values", "rastp,median"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!d.join("x/sweep.csv").exists());
}
