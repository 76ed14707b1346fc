use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn rse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rse"))
        .current_dir(dir)
        .args(["--runs", "runs"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifests(dir: &Path, command: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir.join("runs"))
        .map(|rd| rd.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    out.retain(|p| {
        p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with(&format!("{command}-")))
    });
    out.sort();
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const CONFIG: &str = r#"
version = 1
schema = "data/schema.json"
train = "data/train.jsonl"
dev = "data/test.jsonl"
checkpoint = "out/model.ckpt"
case = 7
model_dim = 8
layers = 2
heads = 2
local_heads = 1
feedforward_dim = 16
dropout = 0.0
max_len = 48
feature_dim = 4
mlp_dim = 8
epochs = 2
warmup_epochs = 1
head_lr = 0.003
encoder_lr = 0.003
"#;

/// A workspace with a small generated corpus and a run config.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = rse(
        dir.path(),
        &["generate", "--out", "data", "--seed", "3", "--train", "24", "--test", "8"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn generate_writes_corpus_schema_and_manifest() {
    let dir = workspace();
    for f in ["schema.json", "train.jsonl", "test.jsonl"] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("data/dev.jsonl").exists());
    let lines = std::fs::read_to_string(dir.path().join("data/train.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 24);
    let m = manifests(dir.path(), "generate");
    assert_eq!(m.len(), 1);
    assert_eq!(read_json(&m[0])["seed"], 3);
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = workspace();
    let out = rse(dir.path(), &["train", "--config", "run.toml", "--quiet"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("out/model.ckpt").exists());
    let first = read_json(&manifests(dir.path(), "train")[0]);
    assert!(first["metrics"]["dev"]["scores"].is_object());
    assert!(first["schema_hash"].is_string());

    // a fixed seed gives the same metrics again, in a second manifest
    let out = rse(dir.path(), &["train", "--config", "run.toml", "--quiet"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let runs = manifests(dir.path(), "train");
    assert_eq!(runs.len(), 2);
    assert_eq!(read_json(&runs[1])["metrics"], first["metrics"]);

    let out = rse(
        dir.path(),
        &["eval", "--checkpoint", "out/model.ckpt", "--corpus", "data/test.jsonl", "--split", "1"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("Arg-C"), "{}", stdout(&out));

    let out = rse(
        dir.path(),
        &["predict", "--checkpoint", "out/model.ckpt", "--corpus", "data/test.jsonl", "--out", "out/pred.jsonl"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let preds = std::fs::read_to_string(dir.path().join("out/pred.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 8);
    let first: Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    for key in ["id", "tokens", "condition", "gold", "predicted", "subtasks"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(first["subtasks"].as_array().unwrap().len(), 6);
}

#[test]
fn missing_corpus_exits_2_and_names_the_path() {
    let dir = workspace();
    let config = CONFIG.replace("data/train.jsonl", "data/nowhere.jsonl");
    std::fs::write(dir.path().join("bad.toml"), config).unwrap();
    let out = rse(dir.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.jsonl"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_2() {
    let dir = workspace();
    std::fs::write(dir.path().join("typo.toml"), format!("{CONFIG}epoch = 3\n")).unwrap();
    let out = rse(dir.path(), &["train", "--config", "typo.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epoch"), "{}", stderr(&out));

    let out = rse(dir.path(), &["train", "--config", "absent.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.toml"));

    let out = rse(dir.path(), &["bogus-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_reports_one_row_per_case_and_refuses_single_seed() {
    let dir = workspace();
    let out = rse(
        dir.path(),
        &["ablate", "--config", "run.toml", "--test", "data/test.jsonl", "--cases", "1,4", "--seeds", "1"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("three seeds"), "{}", stderr(&out));

    let out = rse(
        dir.path(),
        &["ablate", "--config", "run.toml", "--test", "data/test.jsonl", "--cases", "1,9", "--seeds", "3"],
    );
    assert_eq!(out.status.code(), Some(2));

    let out = rse(
        dir.path(),
        &["ablate", "--config", "run.toml", "--test", "data/test.jsonl", "--cases", "1,4,7", "--seeds", "3"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{table}");
    let m = read_json(&manifests(dir.path(), "ablate")[0]);
    assert_eq!(m["metrics"]["report"]["rows"].as_array().unwrap().len(), 3);

    // an impossible expectation fails the run after writing the table
    let out = rse(
        dir.path(),
        &[
            "ablate", "--config", "run.toml", "--test", "data/test.jsonl", "--cases", "1,4", "--seeds", "3",
            "--expect-order", "4,1", "--min-gap", "101",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("ordering FAILS"));
}

#[test]
fn bench_checks_repetitions_and_split_range() {
    let dir = workspace();
    let out = rse(dir.path(), &["train", "--config", "run.toml", "--quiet"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let base = ["bench", "--checkpoint", "out/model.ckpt", "--corpus", "data/test.jsonl"];

    let out = rse(dir.path(), &[&base[..], &["--repetitions", "1"]].concat());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("repetitions"));

    let out = rse(dir.path(), &[&base[..], &["--ks", "0,3", "--repetitions", "5"]].concat());
    assert_eq!(out.status.code(), Some(2));

    let out = rse(dir.path(), &[&base[..], &["--ks", "0,1,2", "--repetitions", "5"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let m = read_json(&manifests(dir.path(), "bench")[0]);
    let rows = m["metrics"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(m["workers"], 1);

    // the k = 0 row scores like the unsplit model
    let out = rse(
        dir.path(),
        &["eval", "--checkpoint", "out/model.ckpt", "--corpus", "data/test.jsonl", "--split", "0"],
    );
    assert!(out.status.success());
    let eval = read_json(&manifests(dir.path(), "eval")[0]);
    let strict = &eval["metrics"]["scores"]["ArgC"]["f1"];
    assert_eq!(&rows[0]["f1"], strict);
}
