use std::path::Path;
use std::process::{Command, Output};

use bilstm::cells::{HeadSpec, Model, ModelConfig};
use bilstm::gauss::load_dataset;
use bilstm::logic::load_logic_dataset;
use bilstm::training::{TrainConfig, TrainState};
use serde_json::Value;

fn bilstm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilstm"))
        .args(args)
        .current_dir(dir)
        .env_remove("BILSTM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn parity_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = bilstm(dir.path(), &["parity", "--ref-n", "30", "--ref-m", "250", "--c", "50", "--json"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["reference_count"], 281000);
    assert_eq!(v["m"], 221);

    let v = stdout_json(&bilstm(dir.path(), &["parity", "--ref-m", "250", "--c", "0", "--json"]));
    assert_eq!((v["m"].as_u64(), v["slack"].as_u64()), (Some(250), Some(0)));

    let out = bilstm(dir.path(), &["parity", "--ref-m", "250", "--c", "100000"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no hidden size fits"));
}

#[test]
fn generators() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = bilstm(d, &["gen-gauss", "--dx", "100", "--chunk", "30", "--timesteps", "4", "--out", "g.jsonl"]);
    assert_eq!(code(&out), 1);
    assert!(!d.join("g.jsonl").exists());

    let out = bilstm(d, &["gen-gauss", "--samples", "300", "--seed", "3", "--out", "g.jsonl"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    let ds = load_dataset(&d.join("g.jsonl")).unwrap();
    assert_eq!((ds.spec.d_x, ds.spec.d_y, ds.spec.chunk, ds.spec.timesteps), (120, 12, 12, 10));
    assert_eq!(v["sigma_digest"], ds.sigma_digest());

    let out = bilstm(d, &["gen-logic", "--train-per-bucket", "0", "--test-per-bucket", "0", "--out", "e.jsonl"]);
    assert_eq!(code(&out), 0);
    assert!(load_logic_dataset(&d.join("e.jsonl")).unwrap().is_empty());

    let out = bilstm(d, &["gen-logic", "--train-per-bucket", "-5", "--out", "n.jsonl"]);
    assert_eq!(code(&out), 1);

    let out = bilstm(d, &["gen-logic", "--train-per-bucket", "10", "--test-per-bucket", "4", "--out", "l.jsonl"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["verified"], true);
    let ds = load_logic_dataset(&d.join("l.jsonl")).unwrap();
    assert_eq!(ds.train.len() + ds.val.len(), 60);
    assert_eq!(ds.test.len(), 48);
    assert!(ds.test.iter().all(|e| (1..=12).contains(&e.max_ops)));
}

#[test]
fn gradcheck_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = bilstm(dir.path(), &["gradcheck", "--json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let v = stdout_json(&out);
    assert_eq!(v["cases"].as_array().unwrap().len(), 12);
    assert!(v["max_relative_error"].as_f64().unwrap() < 1e-5);

    let out = bilstm(dir.path(), &["gradcheck", "--m", "3", "--n", "2", "--c", "1", "--tol", "1e-14"]);
    assert_eq!(code(&out), 3);
}

const GAUSS_CONFIG: &str = r#"{
  "task": "gauss", "cell": "bilinear", "parity_ref_m": 8, "pool_fraction": 0.2,
  "d_x": 12, "d_y": 3, "chunk": 3, "timesteps": 4, "samples": 300, "sparsity": 0.1,
  "epochs": 3, "batch_size": 32, "seed": 5
}"#;

#[test]
fn train_is_deterministic_and_eval_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), GAUSS_CONFIG).unwrap();
    for run in ["a", "b"] {
        let out = bilstm(d, &["train", "--config", "cfg.json", "--out", run]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(d.join("a/summary.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/summary.json")).unwrap());
    let summary: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(summary["tool_version"], bilstm::VERSION);
    assert_eq!(summary["parity"]["hidden"], summary["experiment"]["model"]["hidden"]);
    assert_eq!(summary["test"]["per_timestep"].as_array().unwrap().len(), 4);
    let telemetry = std::fs::read_to_string(d.join("a/telemetry.csv")).unwrap();
    let steps = 3 * (240usize).div_ceil(32);
    assert_eq!(telemetry.lines().count(), steps + 1);

    // a flag overrides the file
    let out = bilstm(d, &["train", "--config", "cfg.json", "--out", "c", "--epochs", "1"]);
    assert_eq!(code(&out), 0);
    let c: Value = serde_json::from_slice(&std::fs::read(d.join("c/summary.json")).unwrap()).unwrap();
    assert_eq!(c["experiment"]["train"]["epochs"], 1);
    assert_ne!(c["config_digest"], summary["config_digest"]);

    let out = bilstm(d, &["eval", "--checkpoint", "a/best.json"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["metrics"], summary["test"]);
    assert_eq!(v["config_digest"], summary["config_digest"]);
}

#[test]
fn eval_digest_guard_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), GAUSS_CONFIG).unwrap();
    assert_eq!(code(&bilstm(d, &["train", "--config", "cfg.json", "--out", "run", "--epochs", "1"])), 0);
    let gen = ["gen-gauss", "--dx", "12", "--dy", "3", "--chunk", "3", "--timesteps", "4", "--samples", "3000"];
    assert_eq!(code(&bilstm(d, &[&gen[..], &["--seed", "9", "--out", "other.jsonl"]].concat())), 0);

    let out = bilstm(d, &["eval", "--checkpoint", "run/best.json", "--data", "other.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    let out = bilstm(d, &["eval", "--checkpoint", "run/best.json", "--data", "other.jsonl", "--force"]);
    assert_eq!(code(&out), 0);

    // exact conditional mean scored against realized values
    let out = bilstm(d, &["eval", "--oracle", "--data", "other.jsonl", "--split", "train"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    let rows = v["rows"].as_f64().unwrap();
    for (mse, base) in v["per_timestep"].as_array().unwrap().iter().zip(v["residual_baseline"].as_array().unwrap()) {
        let (mse, base) = (mse.as_f64().unwrap(), base.as_f64().unwrap());
        let se = base * (2.0 / rows).sqrt();
        assert!((mse - base).abs() < 5.0 * se, "{mse} vs {base} (se {se})");
    }
    let first = v["residual_baseline"][0].as_f64().unwrap();
    let last = v["residual_baseline"][3].as_f64().unwrap();
    assert!(last <= first);
}

#[test]
fn data_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&bilstm(d, &["eval", "--checkpoint", "missing.json"])), 2);
    assert_eq!(code(&bilstm(d, &["train", "--task", "gauss", "--data", "missing.jsonl", "--hidden", "4", "--cell", "linear"])), 2);
    std::fs::write(d.join("bad.json"), r#"{"task":"gauss","hiden":4}"#).unwrap();
    assert_eq!(code(&bilstm(d, &["train", "--config", "bad.json"])), 1);
    assert_eq!(code(&bilstm(d, &["train", "--task", "gauss", "--cell", "bilinear", "--hidden", "4"])), 1);
    assert_eq!(code(&bilstm(d, &["no-such-command"])), 1);
    assert_eq!(code(&bilstm(d, &["--help"])), 0);
}

#[test]
fn divergence_exits_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{"task":"gauss","cell":"linear","hidden":4,"d_x":12,"d_y":3,"chunk":3,"timesteps":4,"samples":100,"epochs":1,"out":"run"}"#;
    std::fs::write(d.join("cfg.json"), cfg).unwrap();
    let mut model = Model::init(ModelConfig::linear(3, 4, HeadSpec::Regression { out_dim: 3 }), 0).unwrap();
    for t in model.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 1e200);
    }
    TrainState::new(model).to_checkpoint(&TrainConfig::default()).save(&d.join("huge.json")).unwrap();
    let out = bilstm(d, &["train", "--config", "cfg.json", "--resume", "huge.json"]);
    assert_eq!(code(&out), 2, "foreign checkpoint needs --force");
    let out = bilstm(d, &["train", "--config", "cfg.json", "--resume", "huge.json", "--force"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    assert!(d.join("run/telemetry.csv").exists());
}

#[test]
fn analyze_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{"task":"logic","cell":"bilinear","hidden":6,"pool":2,"embed":4,"epochs":1,
                  "train_per_bucket":20,"test_per_bucket":5,"max_train_ops":2,"max_test_ops":4}"#;
    std::fs::write(d.join("cfg.json"), cfg).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bilstm"))
        .args(["train", "--config", "cfg.json"])
        .current_dir(d)
        .env("BILSTM_OUT_DIR", "envdir")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("envdir/best.json").exists());

    let out = bilstm(d, &["analyze", "--checkpoint", "envdir/best.json", "--out", "an"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["sequences"], 40);
    assert!(v["conservation_gap"].as_f64().unwrap() <= 1e-12);
    for f in ["ratios.csv", "transcript.txt", "transcript.jsonl", "analysis.json"] {
        assert!(d.join("an").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(d.join("an/ratios.csv")).unwrap();
    assert!(csv.starts_with("token,count,mean_ratio\n"));
}
