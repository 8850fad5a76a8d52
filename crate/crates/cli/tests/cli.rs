use std::path::Path;
use std::process::{Command, Output};

fn mace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mace"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("MACE_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn small_train(out: &Path) -> Output {
    mace(&[
        "train",
        "--task",
        "pass",
        "--method",
        "edti",
        "--set",
        "task.grid_size=6",
        "--set",
        "task.horizon=20",
        "--set",
        "seeds=[1,2]",
        "--set",
        "updates=5",
        "--set",
        "envs=2",
        "--output",
        out.to_str().unwrap(),
    ])
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(mace(&["--help"]).status.code(), Some(0));
    assert_eq!(mace(&[]).status.code(), Some(1));
    assert_eq!(mace(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn oracle_check_exit_codes() {
    let none = mace(&["oracle-check", "--identity", "none"]);
    assert_eq!(none.status.code(), Some(0), "{}", text(&none));

    let ok = mace(&["oracle-check", "--identity", "theorem1", "--identity", "t2-zero", "--instances", "20"]);
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("theorem1"));

    let tight = mace(&["oracle-check", "--identity", "theorem1", "--tolerance", "1e-30", "--instances", "20"]);
    assert_eq!(tight.status.code(), Some(2), "{}", text(&tight));

    let json = mace(&["oracle-check", "--identity", "mi-copy-action", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["passed"], true);

    let bad = mace(&["oracle-check", "--identity", "nonsense"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = mace(&["train", "--task", "pass", "--method", "nope", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"defaults_from_task": "pass", "method": "eiti", "bogus": 1}"#).unwrap();
    let o = mace(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));

    let o = mace(&["train"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_is_deterministic_and_checkpoints_are_usable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = small_train(d.path());
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    }
    for f in ["aggregate.csv", "seed_1/metrics.csv", "seed_2/metrics.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let agg = std::fs::read_to_string(a.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 6);

    let ckpt = a.path().join("seed_1/checkpoint.bin");
    let o = mace(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--envs", "2", "--behaviour", "greedy"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["update"], 5);

    let o = mace(&["export-heatmaps", "--checkpoint", ckpt.to_str().unwrap(), "--envs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let heat = a.path().join("seed_1/heatmaps");
    assert_eq!(std::fs::read_dir(&heat).unwrap().count(), 8);
    let grid = std::fs::read_to_string(heat.join("edti_target_agent0.csv")).unwrap();
    assert_eq!(grid.lines().count(), 6);
}

#[test]
fn resume_extends_a_run() {
    let straight = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();
    assert!(small_train(straight.path()).status.success());
    let o = mace(&[
        "train", "--task", "pass", "--method", "edti", "--set", "task.grid_size=6", "--set", "task.horizon=20",
        "--set", "seeds=[1,2]", "--set", "updates=3", "--set", "envs=2", "--output", resumed.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let o = mace(&[
        "train", "--task", "pass", "--method", "edti", "--set", "task.grid_size=6", "--set", "task.horizon=20",
        "--set", "seeds=[1,2]", "--set", "updates=5", "--set", "envs=2", "--output", resumed.path().to_str().unwrap(),
        "--resume",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    for f in ["aggregate.csv", "seed_1/metrics.csv", "seed_2/metrics.csv"] {
        assert_eq!(
            std::fs::read(straight.path().join(f)).unwrap(),
            std::fs::read(resumed.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn output_root_applies_to_relative_paths() {
    let root = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mace"))
        .args(["train", "--task", "pass", "--set", "task.grid_size=6", "--set", "task.horizon=10", "--set", "seeds=[3]"])
        .args(["--set", "updates=2", "--set", "envs=1", "--output", "rel"])
        .env("MACE_OUTPUT_ROOT", root.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(root.path().join("rel/seed_3/metrics.csv").exists());
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.bin");
    let o = mace(&["export-heatmaps", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("none.bin"));
    let o = mace(&["eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
