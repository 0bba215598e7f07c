use std::path::Path;
use std::process::{Command, Output};

fn cvpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvpo")).args(args).output().expect("spawn cvpo")
}

fn train_grid(out: &Path, seed: &str) -> Output {
    cvpo(&[
        "train", "--env", "grid", "--algo", "cvpo", "--seed", seed, "--epochs", "3", "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn train_writes_metrics_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_grid(dir.path(), "0");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "env = grid\nno_such_key = 1\n").unwrap();
    let out = cvpo(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = cvpo(&["train", "--env", "grid", "--set", "eps2=-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_cost_limit_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = cvpo(&[
        "train", "--env", "grid", "--epochs", "10", "--set", "cost_limit=0", "--set", "abort_after=2", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_prints_json_summary() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_grid(dir.path(), "1").status.success());
    let ckpt = dir.path().join("ckpt");
    let out = cvpo(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--episodes", "4", "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn plotdata_aggregates_runs() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["0", "1"] {
        assert!(train_grid(&dir.path().join(format!("s{s}")), s).status.success());
    }
    let pattern = format!("{}/s*/metrics.csv", dir.path().display());
    let out_dir = dir.path().join("plots");
    let out = cvpo(&["plotdata", "--in", &pattern, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg = std::fs::read_to_string(out_dir.join("aggregate.csv")).unwrap();
    assert!(agg.lines().nth(1).unwrap().contains(",2,"));
    let out = cvpo(&["plotdata", "--in", &format!("{}/none*/x.csv", dir.path().display()), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
