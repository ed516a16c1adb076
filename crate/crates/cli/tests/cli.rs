use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn domains() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../domains")
}

fn domain(name: &str) -> String {
    domains().join(name).to_string_lossy().into_owned()
}

fn dfindex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfindex")).args(args).output().unwrap()
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn record<'a>(report: &'a Value, op: &str) -> &'a Value {
    report["records"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["operation"] == op)
        .unwrap_or_else(|| panic!("no {op} record"))
}

#[test]
fn invariants_on_the_ball_report_zero_a() {
    let out = dfindex(&["invariants", "--domain", &domain("ball.json"), "--samples", "200"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_of(&out);
    assert_eq!(r["tool"], "dfindex");
    assert_eq!(r["command"], "invariants");
    assert_eq!(r["verdict"]["status"], "PASS");
    let inv = record(&r, "invariants");
    assert_eq!(inv["output"]["a"].as_f64(), Some(0.0));
    assert_eq!(inv["samples"], 200);
    assert!(inv["tolerance"].is_number());
    assert_eq!(record(&r, "normal_vanishing")["status"], "PASS");
}

#[test]
fn invariants_csv_has_one_row_per_sample() {
    let out = dfindex(&["invariants", "--domain", &domain("hartogs.json"), "--samples", "50", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# dfindex "));
    let header = lines.next().unwrap();
    assert!(header.starts_with("index,feature,x1,y1,x2,y2,levi_min"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    let width = header.split(',').count();
    assert!(rows.iter().all(|r| r.split(',').count() == width));
}

#[test]
fn worm_bounds_lie_strictly_inside() {
    let out = dfindex(&["bounds", "--domain", &domain("worm.json"), "--samples", "400"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_of(&out);
    let b = &record(&r, "bounds")["output"];
    let u = b["universal"].as_f64().unwrap();
    assert!(u > 0.0 && u < 1.0, "{u}");
    assert!(b["a"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_psh_exit_codes_follow_the_verdict() {
    let ok = dfindex(&["verify-psh", "--domain", &domain("ball.json"), "--eta", "0.9", "--samples", "600"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(record(&json_of(&ok), "verify_psh")["status"], "PASS");
    let bad = dfindex(&["verify-psh", "--domain", &domain("worm.json"), "--eta", "0.9", "--samples", "600"]);
    assert_eq!(bad.status.code(), Some(1));
    let r = json_of(&bad);
    assert_eq!(r["verdict"]["status"], "FAIL");
    assert_eq!(r["verdict"]["failed"][0], "verify_psh");
}

#[test]
fn estimate_brackets_are_ordered() {
    let out = dfindex(&["estimate", "--domain", &domain("ellipsoid.json"), "--samples", "300"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_of(&out);
    let e = &record(&r, "estimate")["output"];
    let lo = e["lower_bracket"].as_f64().unwrap();
    let hi = e["upper_bracket"].as_f64().unwrap();
    assert!(0.0 <= lo && lo <= hi && hi <= 1.0);
    assert_eq!(e["lower_label"], "LOWER(empirical)");
    assert_eq!(e["upper_label"], "UPPER(heuristic)");
}

#[test]
fn config_file_drives_the_run() {
    let out = dfindex(&["bounds", "--config", &domain("run.json"), "--samples", "200"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json_of(&out);
    assert_eq!(r["domain"]["kind"], "worm");
    assert_eq!(r["config"]["sampling"]["seed"], 7);
    assert_eq!(r["config"]["sampling"]["samples"], 200);
}

#[test]
fn construct_runs_on_the_disc() {
    let out = dfindex(&["construct", "--domain", &domain("disc.json"), "--samples", "200"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json_of(&out);
    assert_eq!(record(&r, "construct")["output"]["sandwich_passed"], true);
    let other = dfindex(&["construct", "--domain", &domain("worm.json")]);
    assert_eq!(other.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dfindex(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dfindex(&["invariants"]).status.code(), Some(2));
    assert_eq!(dfindex(&["invariants", "--domain", "/no/such/domain.json"]).status.code(), Some(2));
    assert_eq!(dfindex(&["verify-psh", "--domain", &domain("ball.json"), "--eta", "1.5"]).status.code(), Some(2));
    assert_eq!(dfindex(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("empty.json", ""),
        ("broken.json", "{\"domain\": "),
        ("unknown.json", "{\"domain\": {\"kind\": \"ball\", \"radius\": 1.0}, \"bogus\": 1}"),
        ("baddomain.json", "{\"domain\": {\"kind\": \"ball\", \"radius\": -1.0}}"),
    ] {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        let out = dfindex(&["bounds", "--config", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn unwritable_output_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("missing").join("report.json");
    let out = dfindex(&["bounds", "--domain", &domain("ball.json"), "--samples", "20", "--out", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let ok = dir.path().join("report.json");
    let out = dfindex(&["bounds", "--domain", &domain("ball.json"), "--samples", "20", "--out", ok.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(ok).unwrap()).unwrap();
    assert_eq!(r["schema_version"], 1);
}

#[test]
fn timings_are_opt_in() {
    let ball = domain("ball.json");
    let args = ["bounds", "--domain", &ball, "--samples", "20"];
    let plain = json_of(&dfindex(&args));
    assert!(record(&plain, "bounds").get("timing_seconds").is_none());
    let mut with = args.to_vec();
    with.push("--timings");
    let timed = json_of(&dfindex(&with));
    assert!(record(&timed, "bounds")["timing_seconds"].as_f64().unwrap() >= 0.0);
}
