use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn idbaseline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idbaseline"))
        .args(args)
        .env_remove("IDBASELINE_OUTPUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn train_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--env",
        "gridworld",
        "--baseline",
        "state",
        "--iters",
        "10",
        "--set",
        "test_sequences=3",
        "--set",
        "env.horizon=20",
        "--out",
        dir.to_str().unwrap(),
        "-q",
    ];
    args.extend_from_slice(extra);
    idbaseline(&args)
}

#[test]
fn train_writes_ten_records_and_one_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    let o = train_small(&run, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 10);
    let ckpts: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "completed");
    assert_eq!(manifest["summary"]["iterations"], 10);
}

#[test]
fn rerun_with_same_seed_is_bitwise_identical() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&train_small(&a, &[])), 0);
    assert_eq!(code(&train_small(&b, &[])), 0);
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
    let ck = "checkpoints/iter_000010/policy.ckpt";
    assert_eq!(fs::read(a.join(ck)).unwrap(), fs::read(b.join(ck)).unwrap());
}

#[test]
fn stored_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&train_small(&a, &[])), 0);
    let cfg = a.join("config.toml");
    let o = idbaseline(&["train", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "-q"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
}

#[test]
fn existing_run_needs_force() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small(&run, &[])), 0);
    assert_eq!(code(&train_small(&run, &[])), 1);
    assert_eq!(code(&train_small(&run, &["--force"])), 0);
}

#[test]
fn output_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_idbaseline"))
        .args(["train", "--iters", "2", "--set", "env.horizon=10", "--set", "test_sequences=2", "-q"])
        .env("IDBASELINE_OUTPUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("gridworld-state-s0/manifest.json").exists());
}

#[test]
fn meta_manifest_records_kind_and_adaptation() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    let o = idbaseline(&[
        "train",
        "--env",
        "motivating2",
        "--baseline",
        "meta",
        "--iters",
        "1",
        "--set",
        "env.num_jobs=30",
        "--set",
        "test_sequences=2",
        "--out",
        run.to_str().unwrap(),
        "-q",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let b = &m["config"]["train"]["baseline"];
    assert_eq!(b["kind"], "meta");
    assert_eq!(b["k"], 8);
    assert_eq!(b["inner_steps"], 5);
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    let out = run.to_str().unwrap();
    for args in [
        vec!["train", "--set", "train.learning_rate=0.1", "--out", out],
        vec!["train", "--env", "mujoco", "--out", out],
        vec!["train", "--baseline", "oracle", "--env", "motivating2", "--out", out],
        vec!["train", "--set", "train.gamma=1.5", "--out", out],
        vec!["check", "mujoco"],
        vec!["frobnicate"],
    ] {
        let o = idbaseline(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let o = idbaseline(&["train", "--config", "/nonexistent/idbaseline.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_inputs_writes_stable_files_and_refuses_overwrite() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = idbaseline(&["gen-inputs", "--env", "motivating2", "--count", "10", "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for id in 0..10 {
        let name = format!("{id}.csv");
        let text = fs::read_to_string(a.join(&name)).unwrap();
        assert_eq!(text, fs::read_to_string(b.join(&name)).unwrap());
        let rows = text.lines().filter(|l| !l.trim().is_empty()).count();
        // one (interarrival, size) row per job
        assert_eq!(rows, 500, "{name}");
    }
    assert_eq!(fs::read_dir(&a).unwrap().count(), 10);
    let again = idbaseline(&["gen-inputs", "--env", "motivating2", "--count", "10", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&again), 1);
    let forced = idbaseline(&["gen-inputs", "--env", "motivating2", "--count", "10", "--out", a.to_str().unwrap(), "--force"]);
    assert_eq!(code(&forced), 0);
}

#[test]
fn check_suites_report_and_exit_zero() {
    let o = idbaseline(&["check", "gradcheck", "--cases", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
    let o = idbaseline(&["check", "gridworld", "--gamma", "0.9", "--trajectories", "20000"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("6.9252"));
}

#[test]
fn eval_reference_controllers() {
    let o = idbaseline(&["eval", "--env", "motivating2", "--controller", "shortest-queue", "--sequences", "3", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["per_sequence"].as_array().unwrap().len(), 3);
    let o = idbaseline(&["eval", "--env", "motivating2"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_and_variance_report_on_a_run() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small(&run, &[])), 0);
    let r = run.to_str().unwrap();
    let o = idbaseline(&["eval", "--run", r, "--sequences", "2", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = idbaseline(&[
        "variance-report",
        "--run",
        r,
        "--kinds",
        "none,state,state",
        "--rollouts",
        "8",
        "--per-input",
        "4",
        "--fit-iters",
        "3",
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    // the same kind listed twice gives identical rows
    assert_eq!(rows[1], rows[2]);
}

#[test]
fn variance_report_rejects_mismatched_environment() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small(&run, &[])), 0);
    let policy = run.join("checkpoints/iter_000010/policy.ckpt");
    let o = idbaseline(&["variance-report", "--env", "motivating2", "--policy", policy.to_str().unwrap(), "--rollouts", "4", "--per-input", "2"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimensions"));
}

#[test]
fn gridworld_zero_policy_cross_check_line() {
    let o = idbaseline(&[
        "variance-report",
        "--env",
        "gridworld",
        "--zero-policy",
        "--kinds",
        "none,oracle",
        "--visitation",
        "discounted",
        "--rollouts",
        "64",
        "--per-input",
        "8",
        "--set",
        "train.gamma=0.5",
        "--set",
        "env.horizon=14",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("cross-check"));
}
