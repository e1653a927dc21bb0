mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn-probe"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let corpus = common::toy_corpus(7);
    fs::write(dir.path().join("retain.txt"), corpus.retain.join("\n")).unwrap();
    fs::write(dir.path().join("forget.txt"), corpus.forget.join("\n")).unwrap();
    let out = run(
        dir.path(),
        &[
            "toy-pair",
            "--retain",
            "retain.txt",
            "--forget",
            "forget.txt",
            "--out",
            "m",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir
}

const PAIR: [&str; 6] = [
    "--dataset",
    "m/forget.jsonl",
    "--pre",
    "toy:m/pre.json",
    "--post",
    "toy:m/post.json",
];

#[test]
fn extract_writes_json_to_stdout() {
    let dir = setup();
    let out = run(
        dir.path(),
        &[&["extract"][..], &PAIR, &["--tau", "0.5"]].concat(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert_eq!(v["config"]["tau_list"], serde_json::json!([0.5]));
}

#[test]
fn baseline_and_toy_train() {
    let dir = setup();
    let out = run(
        dir.path(),
        &[
            "baseline",
            "--dataset",
            "m/forget.jsonl",
            "--pre",
            "toy:m/pre.json",
            "--format",
            "csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("pre_only,,,"));

    let out = run(
        dir.path(),
        &[
            "toy-train",
            "--corpus",
            "retain.txt",
            "--out",
            "single.json",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("single.json").exists());
}

#[test]
fn exit_codes() {
    let dir = setup();
    let code = |args: &[&str]| run(dir.path(), args).status.code();

    assert_eq!(
        code(&[&["extract"][..], &PAIR, &["--w", "0.5"]].concat()),
        Some(1)
    );
    assert_eq!(
        code(&[&["extract"][..], &PAIR, &["--gamma", "0"]].concat()),
        Some(1)
    );
    assert_eq!(
        code(&[&["extract"][..], &PAIR, &["--tau", "1.5"]].concat()),
        Some(1)
    );
    assert_eq!(code(&[&["sweep"][..], &PAIR].concat()), Some(1));
    assert_eq!(
        code(&[
            "extract",
            "--dataset",
            "missing.jsonl",
            "--pre",
            "toy:m/pre.json",
            "--post",
            "toy:m/post.json"
        ]),
        Some(1)
    );
    assert_eq!(code(&["extract", "--bogus"]), Some(1));
    assert_eq!(
        code(&[
            "extract",
            "--dataset",
            "m/forget.jsonl",
            "--pre",
            "http://127.0.0.1:1",
            "--post",
            "toy:m/post.json"
        ]),
        Some(2)
    );
    assert_eq!(code(&["--help"]), Some(0));
}
