//! End-to-end runs of the `tencomp` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tencomp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tencomp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

const RANK1: &str = r#"{"kind":"low_rank","shape":[8,8,8],"rank":1,"noise":0.0,"seed":3}"#;

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "spec.json", RANK1);
    for out in ["a.sptn", "b.sptn"] {
        let o = tencomp(dir.path(), &["-q", "generate", "--spec", "spec.json", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    // The file name is part of the header, so compare everything after it.
    let strip = |b: Vec<u8>| String::from_utf8(b).unwrap().replace("\"a\"", "\"b\"");
    assert_eq!(strip(read("a.sptn")), strip(read("b.sptn")));
    assert_eq!(read("a.sptn.meta.json"), read("b.sptn.meta.json"));
}

#[test]
fn malformed_config_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "spec.json", r#"{"kind":"low_rank","shape":[4,4],"rank":"two","seed":1}"#);
    let o = tencomp(dir.path(), &["generate", "--spec", "spec.json", "--out", "t.sptn"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["path"], "rank");
    assert!(!dir.path().join("t.sptn").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{"method":{"method":"cpd","rank":1},"train":{"learning_rat":0.1}}"#);
    write(dir.path(), "spec.json", RANK1);
    tencomp(dir.path(), &["-q", "generate", "--spec", "spec.json", "--out", "t.sptn"]);
    let o = tencomp(dir.path(), &["complete", "--input", "t.sptn", "--config", "c.json", "--out", "p.sptn"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["error"]["message"].as_str().unwrap().contains("learning_rat"));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{"method":{"method":"cpd","rank":1}}"#);
    let o = tencomp(dir.path(), &["complete", "--input", "nope.sptn", "--config", "c.json", "--out", "p.sptn"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"]["kind"], "io");
}

#[test]
fn generate_sample_complete_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "spec.json", RANK1);
    write(d, "c.json", r#"{"method":{"method":"cpd","rank":1},"seed":2}"#);
    let steps: [&[&str]; 3] = [
        &["-q", "generate", "--spec", "spec.json", "--out", "truth.sptn"],
        &["-q", "--seed", "4", "sample", "--input", "truth.sptn", "--fraction", "0.2", "--out", "obs.sptn"],
        &["-q", "complete", "--input", "obs.sptn", "--config", "c.json", "--out", "pred.sptn", "--checkpoint", "m.json"],
    ];
    for args in steps {
        let o = tencomp(d, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(d.join("m.json").exists());
    let o = tencomp(
        d,
        &["--json", "evaluate", "--prediction", "pred.sptn", "--truth", "truth.sptn", "--observed", "obs.sptn"],
    );
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["mae"].as_f64().unwrap() < 1e-3, "{v}");
    assert_eq!(v["entries"], 512 - 102);
}

#[test]
fn benchmark_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "b.json",
        r#"{"tensor":{"generate":{"kind":"low_rank","shape":[6,6,6],"rank":2,"seed":1}},
            "methods":[{"method":"cpd","rank":2}],"repetitions":2,"train":{"max_epochs":200}}"#,
    );
    let o = tencomp(d, &["-q", "benchmark", "--config", "b.json", "--out", "r.csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("tensor,method,rank"));
    assert_eq!(lines.count(), 4);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(summary["provenance"]["command"], "benchmark");
    assert_eq!(summary["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn nested_config_errors_report_the_full_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases = [
        (
            r#"{"tensor":{"file":"t.sptn"},"methods":[{"method":"cpd","rank":2},{"method":"tucker","ranks":[2,"x"]}]}"#,
            "methods[1].ranks[1]",
        ),
        (r#"{"tensor":{"file":"t.sptn"},"methods":[{"method":"cpd"}]}"#, "methods[0].rank"),
        (r#"{"tensor":{"file":"t.sptn"},"repetitions":-1}"#, "repetitions"),
    ];
    for (text, want) in cases {
        write(d, "b.json", text);
        let o = tencomp(d, &["benchmark", "--config", "b.json", "--out", "r.csv"]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert_eq!(stderr_json(&o)["error"]["path"], want, "{text}");
    }
}
