//! Command-line behavior: outputs, exit codes, seeding.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "model": {
    "encoder": {"hidden_layers": [16], "latent_dim": 16, "dropout": []},
    "base": {"hidden_layers": [16], "intermediate_dim": 8, "dropout": []},
    "wifi_head": {"hidden_layers": [16], "latent_dim": 8, "dropout": []},
    "lora_head": {"hidden_layers": [16], "latent_dim": 8, "dropout": []}
  },
  "training": {"epochs": 4, "batch_size": 32, "early_stop": false}
}"#;

fn run(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geoloc"));
    cmd.args(args).env_remove("GEOLOC_SEED");
    if let Some(s) = seed_env {
        cmd.env("GEOLOC_SEED", s);
    }
    cmd.output().expect("spawn geoloc")
}

fn ok(args: &[&str]) -> String {
    let out = run(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, env: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["synth", "--env", env, "--samples", "300", "--transmitters", "12", "--seed", seed, "--out", s(&out)]);
    out
}

fn config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn synth_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = synth(dir.path(), "a.csv", "indoor", "1");
    assert!(csv.exists());
    assert!(dir.path().join("a.csv.manifest.json").exists());
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let by_flag = synth(d, "flag.csv", "outdoor", "2");
    let by_env = d.join("env.csv");
    let out = run(&["synth", "--env", "outdoor", "--samples", "300", "--transmitters", "12", "--seed", "1", "--out", s(&by_env)], Some("2"));
    assert!(out.status.success());
    assert_eq!(std::fs::read(by_flag).unwrap(), std::fs::read(by_env).unwrap());
}

#[test]
fn preprocess_reports_kept_features_and_leaves_input_alone() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = synth(d, "raw.csv", "indoor", "3");
    let before = std::fs::read(&input).unwrap();
    let out = d.join("reduced.csv");
    let stdout = ok(&["preprocess", "--in", s(&input), "--out", s(&out)]);
    let line = stdout.lines().find(|l| l.starts_with("kept_features=")).expect("kept_features line");
    let (kept, total) = line["kept_features=".len()..].split_once(" of ").unwrap();
    assert!(kept.parse::<usize>().unwrap() <= total.parse::<usize>().unwrap());
    assert_eq!(total, "12");
    assert_eq!(std::fs::read(&input).unwrap(), before);
    assert!(d.join("reduced.csv.norm.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["train", "--bogus"], None).status.code(), Some(2));
    let missing = d.join("nope.csv");
    let out = run(&["train", "--env", "indoor", "--data", s(&missing), "--out", s(&d.join("r"))], None);
    assert_eq!(out.status.code(), Some(3));

    let bad = d.join("bad.toml");
    std::fs::write(&bad, "[trainig]\nepochs = 1\n").unwrap();
    let data = synth(d, "x.csv", "indoor", "1");
    let out = run(&["train", "--env", "indoor", "--data", s(&data), "--config", s(&bad), "--out", s(&d.join("r2"))], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_then_eval_and_refuse_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = synth(d, "in.csv", "indoor", "5");
    let cfg = config(d);
    let run_dir = d.join("run");
    ok(&["train", "--env", "indoor", "--data", s(&data), "--config", s(&cfg), "--out", s(&run_dir)]);
    for f in ["manifest.json", "curve.csv", "model.glmodel", "test_report.json", "run.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(run_dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 4);

    let again = run(&["train", "--env", "indoor", "--data", s(&data), "--config", s(&cfg), "--out", s(&run_dir)], None);
    assert!(!again.status.success());

    let eval_dir = d.join("eval");
    ok(&["eval", "--model", s(&run_dir.join("model.glmodel")), "--data", s(&data), "--out", s(&eval_dir)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    assert!(report.to_string().contains("mde"));
    assert!(std::fs::read_dir(&eval_dir).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("cdf_")));
}

#[test]
fn compare_scratch_curves_share_epoch_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let source = synth(d, "src.csv", "outdoor", "6");
    let target = synth(d, "tgt.csv", "outdoor", "7");
    let cfg = config(d);
    ok(&["train", "--env", "outdoor", "--data", s(&source), "--config", s(&cfg), "--out", s(&d.join("src"))]);
    let out = d.join("tl");
    ok(&[
        "transfer",
        "--source-model",
        s(&d.join("src/model.glmodel")),
        "--target-data",
        s(&target),
        "--config",
        s(&cfg),
        "--compare-scratch",
        "--reference-epoch",
        "4",
        "--out",
        s(&out),
    ]);
    let epochs = |f: &str| -> Vec<String> {
        std::fs::read_to_string(out.join(f))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect()
    };
    assert_eq!(epochs("curve_tl.csv"), epochs("curve_scratch.csv"));
    assert_eq!(epochs("curve_tl.csv").len(), 4);
    assert!(out.join("convergence.json").exists());
}
