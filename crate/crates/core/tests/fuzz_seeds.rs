//! Replays the checked-in fuzz seeds through the round-trip properties the
//! fuzz targets assert, so the seeds stay valid documents.

use std::fs;
use std::path::PathBuf;

use ptoda::coordinate_model::{parse_pattern_set, pattern_set_to_json};
use ptoda::formula_ir::{formula_to_value, parse_formula};
use ptoda::homology_oracle::{answer_line, parse_request, parse_response, request_to_value, response_to_value};
use ptoda::poincare_algebra::PolyMapPipeline;
use ptoda::reduction_compiler::{parse_reduction, reduction_to_json};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn formula_seeds_round_trip() {
    for (p, text) in seeds("formula_doc") {
        let f = parse_formula(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(parse_formula(&formula_to_value(&f).to_string()).unwrap(), f);
    }
}

#[test]
fn pipeline_seeds_round_trip() {
    for (p, text) in seeds("pipeline_doc") {
        let pipe = PolyMapPipeline::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(PolyMapPipeline::from_json(&pipe.to_json()).unwrap(), pipe);
    }
}

#[test]
fn request_seeds_round_trip_and_are_answered() {
    for (p, text) in seeds("oracle_request") {
        let r = parse_request(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(parse_request(&request_to_value(&r).to_string()).unwrap(), r);
        let out: serde_json::Value = serde_json::from_str(&answer_line(&text.replace('\n', ""))).unwrap();
        assert!(out.get("error").is_none(), "{}: {out}", p.display());
    }
}

#[test]
fn response_seeds_round_trip() {
    for (p, text) in seeds("oracle_response") {
        match parse_response(&text) {
            Ok(r) => assert_eq!(parse_response(&response_to_value(&r).to_string()).unwrap(), r),
            Err(e) => assert!(p.to_string_lossy().contains("error"), "{}: {e}", p.display()),
        }
    }
}

#[test]
fn reduction_seeds_round_trip() {
    for (p, text) in seeds("reduction_output") {
        let r = parse_reduction(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(parse_reduction(&reduction_to_json(&r)).unwrap(), r);
    }
}

#[test]
fn pattern_set_seeds_round_trip() {
    for (p, text) in seeds("pattern_set_doc") {
        let a = parse_pattern_set(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(parse_pattern_set(&pattern_set_to_json(&a)).unwrap(), a);
    }
}
