//! The `irs` binary: exit codes, reports and logs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn irs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irs"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["gen-synth", "--out-dir", ".", "--name", name, "--num-ids", "60", "-d", "16", "--imgs-per-id", "2"];
    args.extend_from_slice(extra);
    ok(&irs(dir, &args));
    dir.join(format!("{name}.json"))
}

fn rank1(stdout: &str) -> f64 {
    let field = stdout.split_whitespace().find(|w| w.starts_with("rank1=")).unwrap();
    field["rank1=".len()..].parse().unwrap()
}

#[test]
fn missing_manifest_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = irs(dir.path(), &["train", "--manifest", "no/such/manifest.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/manifest.json"));
    let out = irs(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_on_clean_data_is_perfect_and_fda_matches_onehot() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "clean", &["--noise", "0", "--view-shift", "0"]);
    let out = ok(&irs(dir.path(), &["train", "--manifest", "clean.json", "--coding", "onehot", "--lambda", "0.1"]));
    assert_eq!(rank1(&out), 1.0);

    gen(dir.path(), "noisy", &["--noise", "1.2"]);
    let onehot = ok(&irs(dir.path(), &["train", "--manifest", "noisy.json", "--coding", "onehot", "--out", "m.json"]));
    let fda = ok(&irs(dir.path(), &["train", "--manifest", "noisy.json", "--coding", "fda"]));
    assert_eq!(rank1(&onehot), rank1(&fda));

    let eval = ok(&irs(dir.path(), &["evaluate", "--manifest", "noisy.json", "--model", "m.json", "--cmc-csv", "c.csv"]));
    assert_eq!(rank1(&eval), rank1(&onehot));
    assert!(std::fs::read_to_string(dir.path().join("c.csv")).unwrap().starts_with("rank,cmc\n"));

    let fused = ok(&irs(
        dir.path(),
        &["evaluate", "--manifest", "noisy.json", "--model", "m.json", "--fuse", "noisy.json:m.json"],
    ));
    assert_eq!(rank1(&fused), rank1(&onehot));
}

#[test]
fn kernel_flags_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "k", &[]);
    ok(&irs(dir.path(), &["train", "--manifest", "k.json", "--kernel", "rbf", "--bandwidth", "median"]));
    ok(&irs(dir.path(), &["train", "--manifest", "k.json", "--kernel", "rbf", "--bandwidth", "4.5"]));
    ok(&irs(dir.path(), &["train", "--manifest", "k.json", "--kernel", "linear"]));
    let bad = irs(dir.path(), &["train", "--manifest", "k.json", "--kernel", "rbf", "--bandwidth", "wide"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn simulate_budget_log_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "s", &[]);
    ok(&irs(dir.path(), &["simulate", "--manifest", "s.json", "--strategy", "jointe2", "--budget", "50", "--seed-ids", "3", "--log", "a.jsonl"]));
    let log = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 50);
    for key in ["step", "probe_index", "chosen_by", "true_match_rank", "epsilon1", "epsilon2", "epsilon3", "update_ms"] {
        assert!(log.lines().next().unwrap().contains(&format!("\"{key}\"")), "missing {key}");
    }

    let run = |name: &str| {
        ok(&irs(dir.path(), &["simulate", "--manifest", "s.json", "--strategy", "random", "--seed", "7", "--budget", "20", "--log", name]));
        std::fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("update_ms");
                v
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run("r1.jsonl"), run("r2.jsonl"));
}

#[test]
fn simulate_compare_reports_each_strategy_at_each_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "s", &[]);
    ok(&irs(
        dir.path(),
        &[
            "simulate", "--manifest", "s.json", "--compare", "jointe2,random,density", "--budget", "20",
            "--checkpoints", "5,10,15,20", "--seed-ids", "3", "--folds", "2", "--report", "rep.json",
        ],
    ));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["summary"].as_array().unwrap().len(), 12);
    assert_eq!(rep["rows"].as_array().unwrap().len(), 24);
}

#[test]
fn simulate_replay_reproduces_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "s", &[]);
    let common = ["simulate", "--manifest", "s.json", "--seed-ids", "3", "--seed", "2"];
    let mut a = common.to_vec();
    a.extend(["--budget", "15", "--log", "live.jsonl", "--checkpoint-out", "live.json"]);
    ok(&irs(dir.path(), &a));
    let mut b = common.to_vec();
    b.extend(["--replay", "live.jsonl", "--checkpoint-out", "replay.json"]);
    ok(&irs(dir.path(), &b));
    for tag in ["tinv", "p"] {
        let x = std::fs::read(dir.path().join(format!("live.{tag}.f64le"))).unwrap();
        let y = std::fs::read(dir.path().join(format!("replay.{tag}.f64le"))).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn evaluate_runs_a_protocol_config() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen(dir.path(), "p", &[]);
    let config = serde_json::json!({
        "data": {"type": "manifest", "path": manifest},
        "split_ratio": 0.5,
        "seeds": [0, 1, 2],
        "lambda": 0.1,
        "coding": "onehot",
        "kernel": {"mode": "none"},
        "mode": {"type": "incremental", "start_ids": 5, "step_ids": 5, "compare_batch": true, "checkpoints": [10, 20]}
    });
    std::fs::write(dir.path().join("proto.json"), config.to_string()).unwrap();
    let out = ok(&irs(dir.path(), &["evaluate", "--config", "proto.json", "--report", "r.json", "--cmc-csv", "r.csv"]));
    assert!(out.contains("checkpoint ids@10"));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(rep["per_seed"].as_array().unwrap().len(), 3);
    assert!(rep["per_seed"][0]["rankings_identical"].as_bool().unwrap());
    assert!(std::fs::read_to_string(dir.path().join("r.csv")).unwrap().starts_with("rank,mean,ids@10,ids@20\n"));
}
