use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use ptoda::corpus::{exhaustive_corpus, write_jsonl};
use ptoda::formula_ir::parse_formula;
use ptoda::reduction_compiler::{compile, reduction_from_value};
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_ptoda");

fn write(dir: &Path, name: &str, doc: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, doc.to_string()).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, Value) {
    let out = Command::new(BIN).args(args).env_remove("PTODA_ORACLE").output().unwrap();
    (out.status.code().unwrap(), parse_stdout(&out))
}

fn parse_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {:?}", out))
}

fn var(b: &str, c: usize) -> Value {
    json!({"var_eq0": [b, c]})
}

fn triangle() -> Value {
    json!({"fmt": 1, "free_blocks": [{"name": "X", "arity": 3}], "matrix": {"or": [var("X", 0), var("X", 1), var("X", 2)]}})
}

fn sentence(q: &str) -> Value {
    json!({"fmt": 1, "quantifiers": [{"q": q, "name": "Y", "arity": 2}], "matrix": var("Y", 0)})
}

#[test]
fn poincare_of_triangle_of_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "tri.json", &triangle());
    let (code, doc) = run(&["poincare", p.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(doc["poincare"], json!([1, 1, 3]));
    assert_eq!(doc["betti"], json!([1, 1, 3]));
    assert_eq!(doc["checks"]["euler"], json!(true));
}

#[test]
fn patterns_feed_back_into_poincare_and_crosscheck() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "tri.json", &triangle());
    let (code, pats) = run(&["patterns", p.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(pats["patterns"].as_array().unwrap().len(), 6);
    let q = write(dir.path(), "tri_patterns.json", &pats);
    let (_, doc) = run(&["poincare", q.to_str().unwrap()]);
    assert_eq!(doc["poincare"], json!([1, 1, 3]));
    let (code, cert) = run(&["crosscheck", q.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(cert["ok"], json!(true));
    assert_eq!(cert["topology"], json!("closed"));
    assert_eq!(cert["engines"]["nerve"], cert["engines"]["poset"]);
}

#[test]
fn decide_reports_verdict_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let t = write(dir.path(), "exists.json", &sentence("exists"));
    let (code, doc) = run(&["decide", t.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(doc["verdict"], json!(true));
    assert_eq!(doc["trace"].as_array().unwrap().len(), 1);
    assert_eq!(doc["trace"][0]["case"], json!("exists"));

    let f = write(dir.path(), "forall.json", &sentence("forall"));
    let (code, doc) = run(&["decide", f.to_str().unwrap()]);
    assert_eq!((code, doc["verdict"].clone()), (0, json!(false)));
    let (code, _) = run(&["decide", "--exit-verdict", f.to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn reduce_output_reparses_to_the_compiled_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json!({
        "fmt": 1,
        "free_blocks": [{"name": "X", "arity": 2}],
        "quantifiers": [{"q": "exists", "name": "Y", "arity": 2}],
        "matrix": {"or": [{"and": [var("X", 0), var("Y", 0)]}, {"and": [var("X", 1), var("Y", 1)]}]},
    });
    let p = write(dir.path(), "f.json", &doc);
    let (code, out) = run(&["reduce", p.to_str().unwrap()]);
    assert_eq!(code, 0);
    let parsed = reduction_from_value(&out).unwrap();
    let direct = compile(&parse_formula(&doc.to_string()).unwrap().zero_completed()).unwrap();
    assert_eq!(parsed, direct);
}

#[test]
fn schema_violations_are_input_errors_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let bad = json!({"fmt": 1, "matrix": {"or": [{"var_eq0": "X0"}]}});
    let p = write(dir.path(), "bad.json", &bad);
    for cmd in ["validate", "reduce", "decide", "patterns"] {
        let (code, doc) = run(&[cmd, p.to_str().unwrap()]);
        assert_eq!(code, 2, "{cmd}");
        assert!(doc["error"].as_str().unwrap().contains("$.matrix.or[0]"), "{cmd}: {doc}");
    }
    let (code, _) = run(&["poincare", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn validate_flags_zero_block_failure() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.json", &triangle());
    let (code, doc) = run(&["validate", ok.to_str().unwrap()]);
    assert_eq!((code, doc["valid"].clone()), (0, json!(true)));
    // X_0 ≠ 0 excludes the zero vector.
    let neq = json!({"fmt": 1, "free_blocks": [{"name": "X", "arity": 2}],
        "matrix": {"neq0": [{"coeff": "1", "exps": [["X", 0, 1]]}]}});
    let bad = write(dir.path(), "neq.json", &neq);
    let (code, doc) = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(doc["valid"], json!(false));
    assert_eq!(doc["zero_block"]["status"], json!("fails"));
}

fn oracle_session(input: &str) -> Vec<Value> {
    let mut child = Command::new(BIN).arg("oracle").stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn oracle_filter_answers_one_line_per_request() {
    let pats = json!({"fmt": 1, "space": [{"name": "X", "coords": 2}], "patterns": [["0x1"], ["0x2"]]});
    let req = json!({"patterns": pats, "ambient": [1], "want": ["betti", "pseudo"]});
    let lines = oracle_session(&format!("{req}\nnot json\n\n{req}\n"));
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["betti"], json!([2]));
    assert_eq!(lines[0]["pseudo"], json!([2]));
    assert!(lines[1]["error"].is_string());
    assert_eq!(lines[0], lines[2]);
}

#[test]
fn decide_through_external_oracle_subprocess() {
    let dir = tempfile::tempdir().unwrap();
    let oracle = format!("{BIN} oracle");
    for (q, expected) in [("exists", true), ("forall", false)] {
        let p = write(dir.path(), &format!("{q}.json"), &sentence(q));
        let (code, doc) = run(&["decide", "--oracle", &oracle, p.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert_eq!(doc["verdict"], json!(expected));
        let out = Command::new(BIN).args(["decide", p.to_str().unwrap()]).env("PTODA_ORACLE", &oracle).output().unwrap();
        assert_eq!(parse_stdout(&out)["verdict"], json!(expected));
    }
}

#[test]
fn faulty_or_silent_oracles_are_oracle_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "s.json", &sentence("exists"));
    let negative = r#"while read l; do echo '{"pseudo":[-1]}'; done"#;
    let (code, doc) = run(&["decide", "--oracle", negative, p.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(doc["error"].as_str().unwrap().contains("negative"));
    let (code, doc) = run(&["decide", "--oracle", "sleep 10", "--oracle-timeout", "1", p.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert!(doc["error"].as_str().unwrap().contains("timed out"));
    let (code, _) = run(&["decide", "--oracle", "exit 0", p.to_str().unwrap()]);
    assert_eq!(code, 3);
}

#[test]
fn verify_is_deterministic_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<_> = exhaustive_corpus().into_iter().filter(|c| c.id.starts_with("-/-/") && c.raw.omega() == 1).collect();
    std::fs::write(dir.path().join("small.jsonl"), write_jsonl(&cases)).unwrap();
    let d = dir.path().to_str().unwrap();
    let one = Command::new(BIN).args(["verify", d, "--seed", "3", "--count", "4", "--jobs", "1"]).output().unwrap();
    let two = Command::new(BIN).args(["verify", d, "--seed", "3", "--count", "4", "--jobs", "3"]).output().unwrap();
    assert_eq!(one.stdout, two.stdout);
    let doc = parse_stdout(&one);
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(doc["cases"], json!(cases.len() + 4));
    assert_eq!(doc["failures"], json!(0));
    assert_eq!(doc["seed"], json!(3));
}

#[test]
fn corpus_command_writes_the_generator_output() {
    let dir = tempfile::tempdir().unwrap();
    let (code, doc) = run(&["corpus", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(dir.path().join("exhaustive.jsonl")).unwrap();
    assert_eq!(text, write_jsonl(&exhaustive_corpus()));
    assert_eq!(doc["cases"], json!(exhaustive_corpus().len()));
}
