//! End-to-end tests of the `ustlerw` binary: envelope schema, exact values,
//! check suites, convergence sweeps, figures, and determinism given a seed.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ustlerw"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON envelope")
}

fn write_domain(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SQUARE4: &str = r#"{
  "polygon": [[0,0],[1,0],[1,1],[0,1]],
  "delta": 0.16666666666666666,
  "points": [
    {"x": 0.5, "y": 0.0, "role": "plain"},
    {"x": 1.0, "y": 0.5, "role": "plain"},
    {"x": 0.5, "y": 1.0, "role": "plain"},
    {"x": 0.0, "y": 0.5, "role": "plain"}
  ]
}"#;

const VISIT1: &str = r#"{
  "polygon": [[0,0],[1,0],[1,1],[0,1]],
  "delta": 0.25,
  "points": [
    {"x": 0.5, "y": 0.0, "role": "in"},
    {"x": 0.0, "y": 0.5, "role": "out"},
    {"x": 1.0, "y": 0.5, "role": "visit"}
  ]
}"#;

#[test]
fn combinat_dumps_matrices_and_tilings() {
    let v = run_json(&["combinat", "--n", "2"]);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["backend"], "rational");
    assert_eq!(v["results"]["order"][0], "()()");
    assert_eq!(v["results"]["m"][0][1], -1);
    assert_eq!(v["results"]["m_inverse"][0][1], 1);
    // three dominated pairs at N = 2, one tiling each except the skew pair
    let tilings = v["results"]["tilings"].as_array().unwrap();
    assert_eq!(tilings.len(), 3);
}

#[test]
fn combinat_rejects_large_n() {
    let out = run(&["combinat", "--n", "5"]);
    assert!(!out.status.success());
}

#[test]
fn exact_reports_rational_value() {
    let dir = tempfile::tempdir().unwrap();
    let domain = write_domain(dir.path(), "square.json", SQUARE4);
    let v = run_json(&["exact", "--domain", &domain, "--pattern", "()()"]);
    assert_eq!(v["backend"], "rational");
    let rational = v["results"]["value"]["rational"].as_str().unwrap();
    assert!(rational.contains('/'));
    let f = v["results"]["value"]["float"].as_f64().unwrap();
    assert!(f > 0.0 && f < 1.0);
}

#[test]
fn visit_direct_and_replacing_agree() {
    let dir = tempfile::tempdir().unwrap();
    let domain = write_domain(dir.path(), "visit.json", VISIT1);
    let v = run_json(&["visit", "--domain", &domain, "--omega", "+"]);
    assert_eq!(v["results"]["agree"], true);
    assert_eq!(
        v["results"]["direct"]["rational"],
        v["results"]["replacing"]["rational"]
    );
}

#[test]
fn sample_matches_exact_within_four_sigma_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let domain = write_domain(dir.path(), "square.json", SQUARE4);
    let args = [
        "sample", "--domain", &domain, "--pattern", "()()", "--samples", "5000", "--seed", "11",
    ];
    let v = run_json(&args);
    assert_eq!(v["results"]["pass"], true);
    let again = run_json(&args);
    assert_eq!(v, again, "same seed must reproduce the output exactly");
}

#[test]
fn continuum_spot_values() {
    let v = run_json(&["continuum", "--pattern", "()()", "--points", "0,1,2,3"]);
    assert!((v["results"]["value"].as_f64().unwrap() - 15.0 / 16.0).abs() < 1e-12);
    let v = run_json(&["continuum", "--omega", "+", "--points", "0,1,2"]);
    assert!((v["results"]["value"].as_f64().unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn check_spot_suite_passes_in_both_formats() {
    let v = run_json(&["check", "--suite", "spot"]);
    for row in v["results"].as_array().unwrap() {
        assert_eq!(row["pass"], true, "row {row}");
    }
    let out = run(&["check", "--suite", "spot", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("suite,case,value,reference,error,tolerance,pass"));
}

#[test]
fn converge_kernel_deviation_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let domain = write_domain(
        dir.path(),
        "kern.json",
        r#"{
          "polygon": [[0,0],[1,0],[1,1],[0,1]],
          "delta": 0.125,
          "points": [
            {"x": 0.25, "y": 0.0, "role": "plain"},
            {"x": 0.75, "y": 0.0, "role": "plain"}
          ]
        }"#,
    );
    let v = run_json(&[
        "converge",
        "--domain",
        &domain,
        "--delta",
        "0.125,0.0625,0.03125",
    ]);
    let rows = v["results"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let errs: Vec<f64> = rows
        .iter()
        .map(|r| r["rel_error"].as_f64().unwrap())
        .collect();
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "errors {errs:?}");
    assert!(errs[2] < 0.05);
}

#[test]
fn figure_emits_svg() {
    let dir = tempfile::tempdir().unwrap();
    let domain = write_domain(dir.path(), "square.json", SQUARE4);
    let out = run(&[
        "figure", "--kind", "branches", "--domain", &domain, "--seed", "3",
    ]);
    assert!(out.status.success());
    let svg = String::from_utf8(out.stdout).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    let out = run(&["figure", "--kind", "tiling", "--pattern", "()()()"]);
    assert!(out.status.success());
    let svg = String::from_utf8(out.stdout).unwrap();
    assert!(svg.contains("<polygon"));
}

#[test]
fn figure_rejects_json_format() {
    let out = run(&["figure", "--kind", "tiling", "--pattern", "()", "--format", "json"]);
    assert!(!out.status.success());
}
