use std::path::Path;
use std::process::Command;

use scill_harness::{ExperimentConfig, Method};

fn scill(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_scill"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = scill(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let mut c = ExperimentConfig::quick();
    c.name = "tiny".into();
    c.seeds = vec![0];
    c.methods = vec![Method::Erm, Method::Eiil, Method::Scill];
    c.data.n_train = 400;
    c.data.n_val = 80;
    c.data.n_oracle = 80;
    c.data.n_test = 80;
    c.reference.epochs = 10;
    c.reference.hidden = 4;
    c.groups.thr = 3.0;
    c.groups.eiil_steps = 50;
    c.train.hidden = 4;
    c.train.epochs = 13;
    c.train.lambdas = vec![1.0];
    c.train.anneals = vec![3];
    let p = dir.join("tiny.toml");
    std::fs::write(&p, c.to_toml()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn stepwise_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let config = tiny_config(dir.path());
    ok(&[
        "gen-data",
        "--config",
        &config,
        "--seed",
        "1",
        "--out",
        &d("data"),
    ]);
    for split in ["train", "val", "oracle", "test"] {
        assert!(dir
            .path()
            .join("data")
            .join(format!("{split}.csv"))
            .exists());
    }
    let train = d("data/train.csv");
    ok(&[
        "train-ref",
        "--data",
        &train,
        "--epochs",
        "10",
        "--hidden",
        "4",
        "--out",
        &d("ref.json"),
    ]);
    ok(&[
        "infer-groups",
        "--data",
        &train,
        "--reference",
        &d("ref.json"),
        "--thr",
        "3",
        "--out",
        &d("groups.csv"),
    ]);
    let report = ok(&[
        "check-criteria",
        "--data",
        &train,
        "--reference",
        &d("ref.json"),
        "--groups",
        &d("groups.csv"),
    ]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["label_balance"]["max_log_deviation"].is_number());
    ok(&[
        "train",
        "--data",
        &train,
        "--groups",
        &d("groups.csv"),
        "--epochs",
        "13",
        "--anneal",
        "3",
        "--hidden",
        "4",
        "--penalty",
        "rex",
        "--out",
        &d("run"),
    ]);
    assert!(dir.path().join("run/history.json").exists());
    assert!(dir.path().join("run/epoch_000013.json").exists());
    for strategy in ["ID", "Oracle", "TEV"] {
        let sel = ok(&[
            "select",
            "--checkpoints",
            &d("run"),
            "--strategy",
            strategy,
            "--val",
            &d("data/val.csv"),
            "--oracle",
            &d("data/oracle.csv"),
            "--test",
            &d("data/test.csv"),
            "--train",
            &train,
            "--groups",
            &d("groups.csv"),
            "--reference",
            &d("ref.json"),
        ]);
        let v: serde_json::Value = serde_json::from_str(&sel).unwrap();
        assert_eq!(v["strategy"], strategy);
        assert!(v["epoch"].as_u64().unwrap() >= 1);
    }
}

#[test]
fn run_writes_reports_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = dir.path().join("out");
    let table = ok(&[
        "run",
        "--config",
        &config,
        "--quiet",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(table.starts_with("method,penalty,strategy,val_mean,val_std,test_mean,test_std,seeds"));
    assert_eq!(table.lines().count(), 1 + 3 * 3);
    for f in ["report.csv", "per_seed.csv", "report.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(
        std::fs::read_dir(out.join("checkpoints")).unwrap().count(),
        9
    );
}

#[test]
fn bad_input_exits_nonzero() {
    let out = scill(&[
        "train-ref",
        "--data",
        "/nonexistent.csv",
        "--out",
        "/tmp/never.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.csv"));
    let out = scill(&["run", "--profile", "medium", "--out", "/tmp/never"]);
    assert!(!out.status.success());
}
