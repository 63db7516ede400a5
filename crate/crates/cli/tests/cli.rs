//! End-to-end checks of the binary: wiring, exit codes, manifests.
//! Everything runs on the smoke profile, so nothing here takes long or
//! learns anything; training quality is covered by the core crate and the
//! acceptance suite.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resip-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("manifest.json")).expect("manifest exists");
    serde_json::from_str(&text).expect("manifest parses")
}

#[test]
fn smoke_pipeline_demos_bc_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let demos = tmp.path().join("demos");
    let bc = tmp.path().join("bc-mlp-c");

    let out = run(&[
        "--profile",
        "smoke",
        "collect-demos",
        "--out",
        demos.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(demos.join("demos.jsonl").is_file());
    let m = manifest(&demos);
    assert_eq!(m["method"], "expert");
    assert_eq!(m["randomness"], "low");
    assert!(m["eval_success"].as_f64().unwrap() > 0.9);

    let out = run(&[
        "--profile",
        "smoke",
        "train",
        "bc-mlp-c",
        "--data",
        demos.join("demos.jsonl").to_str().unwrap(),
        "--out",
        bc.to_str().unwrap(),
    ]);
    assert_ok(&out);
    for f in ["policy.json", "bc_train.csv", "eval.json", "manifest.json"] {
        assert!(bc.join(f).is_file(), "missing {f}");
    }
    let m = manifest(&bc);
    assert_eq!(m["method"], "bc-mlp-c");
    assert!(m["eval_success"].is_number());

    // Standalone eval of the saved policy prints a JSON report.
    let out = run(&[
        "--profile",
        "smoke",
        "eval",
        "--policy",
        bc.join("policy.json").to_str().unwrap(),
        "--episodes",
        "4",
    ]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("eval prints JSON");
    assert_eq!(report["episodes"], 4);

    // Report sees both run dirs and tabulates by randomness.
    let out = run(&["report", "--root", tmp.path().to_str().unwrap()]);
    assert_ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("expert"), "table was:\n{table}");
    assert!(table.contains("bc-mlp-c"), "table was:\n{table}");
    assert!(table.contains("low"), "table was:\n{table}");
}

#[test]
fn occupied_out_dir_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(out_dir.join("junk.txt"), "x").unwrap();

    let out = run(&[
        "--profile",
        "smoke",
        "collect-demos",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "config errors exit 2");

    let out = run(&[
        "--profile",
        "smoke",
        "collect-demos",
        "--out",
        out_dir.to_str().unwrap(),
        "--force",
    ]);
    assert_ok(&out);
}

#[test]
fn config_and_profile_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, "{}").unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--profile",
        "smoke",
        "report",
        "--root",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn bad_config_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"demos": 0}"#).unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "report",
        "--root",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let cfg2 = tmp.path().join("cfg2.json");
    fs::write(&cfg2, r#"{"unknown_field": 1}"#).unwrap();
    let out = run(&[
        "--config",
        cfg2.to_str().unwrap(),
        "report",
        "--root",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifact_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "--profile",
        "smoke",
        "train",
        "bc-mlp-c",
        "--data",
        tmp.path().join("nope.jsonl").to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "missing inputs exit 3");
}

#[test]
fn train_kind_input_mismatch_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let demos = tmp.path().join("demos");
    assert_ok(&run(&[
        "--profile",
        "smoke",
        "collect-demos",
        "--out",
        demos.to_str().unwrap(),
    ]));
    let bc = tmp.path().join("bc");
    assert_ok(&run(&[
        "--profile",
        "smoke",
        "train",
        "bc-mlp-c",
        "--data",
        demos.join("demos.jsonl").to_str().unwrap(),
        "--out",
        bc.to_str().unwrap(),
    ]));

    // A regression checkpoint is not a diffusion sampler.
    let out = run(&[
        "--profile",
        "smoke",
        "train",
        "idql",
        "--base",
        bc.join("policy.json").to_str().unwrap(),
        "--out",
        tmp.path().join("idql").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seed_override_changes_manifest_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let demos = tmp.path().join("demos");
    assert_ok(&run(&[
        "--profile",
        "smoke",
        "--seed",
        "31",
        "collect-demos",
        "--out",
        demos.to_str().unwrap(),
    ]));
    assert_eq!(manifest(&demos)["seed"], 31);
}
