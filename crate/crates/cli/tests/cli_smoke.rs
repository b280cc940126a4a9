use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mondeq-cert"))
        .args(args)
        .current_dir(dir)
        .env_remove("MONDEQ_SOLVER_TOL")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str], dir: &Path) -> Value {
    let out = cli(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn ok(args: &[&str], dir: &Path) {
    let out = cli(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn idx(dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, dims.len() as u8];
    for d in dims {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

#[test]
fn generate_then_certify() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "--p0", "3", "--p", "5", "--K", "3", "--seed", "1", "--out", "net.json"], d);
    fs::write(d.join("x.json"), "[0.2, -0.4, 0.1]").unwrap();
    let r = ok_json(&["certify", "--net", "net.json", "--x0", "x.json", "--eps", "0.01,0.05", "--norm", "2"], d);
    assert_eq!(r["command"], "certify");
    assert_eq!(r["model"], "robustness");
    let runs = r["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for run in runs {
        assert_eq!(run["summary"]["total"], 1);
        assert_eq!(run["items"][0]["input"], "x.json");
    }
}

#[test]
fn radius_is_rescaled_by_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["gen", "--p0", "2", "--p", "3", "--K", "2", "--mu", "0.1307", "--sigma", "0.3081", "--out", "net.json"];
    ok(&args, d);
    fs::write(d.join("x.json"), "[0.5, 0.5]").unwrap();
    let r = ok_json(&["certify", "--net", "net.json", "--x0", "x.json", "--eps", "0.1"], d);
    let eff = r["runs"][0]["effective_eps"].as_f64().unwrap();
    assert!((eff - 0.1 / 0.3081).abs() < 1e-12);
    assert!((r["normalization"]["sigma"].as_f64().unwrap() - 0.3081).abs() < 1e-15);
}

#[test]
fn uncertified_inputs_still_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "--p0", "2", "--p", "4", "--K", "3", "--seed", "4", "--out", "net.json"], d);
    fs::write(d.join("x.json"), "[0.0, 0.0]").unwrap();
    let r = ok_json(&["certify", "--net", "net.json", "--x0", "x.json", "--eps", "50"], d);
    assert_eq!(r["runs"][0]["items"][0]["certified"], false);
    assert_eq!(r["runs"][0]["summary"]["certified"], 0);
}

#[test]
fn bad_configuration_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = cli(&["predict", "--net", "nope.json", "--x0", "x.json"], d);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    ok(&["gen", "--p0", "2", "--p", "3", "--K", "2", "--out", "net.json"], d);
    fs::write(d.join("x.json"), "[0.0, 0.0, 0.0]").unwrap();
    assert!(!cli(&["predict", "--net", "net.json", "--x0", "x.json"], d).status.success());
    fs::write(d.join("x.json"), "[0.0, 0.0]").unwrap();
    assert!(!cli(&["certify", "--net", "net.json", "--x0", "x.json", "--eps", "-1"], d).status.success());
    assert!(!cli(&["--solver-tol", "0", "certify", "--net", "net.json", "--x0", "x.json", "--eps", "0.1"], d).status.success());
    assert!(!cli(&["oracle", "--net", "net.json", "--x0", "x.json", "--eps", "0.1", "--norm", "1"], d).status.success());
}

#[test]
fn imported_images_feed_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("img"), idx(&[3, 2, 2], &[0, 255, 0, 255, 10, 20, 30, 40, 1, 2, 3, 4])).unwrap();
    fs::write(d.join("lab"), idx(&[3], &[5, 0, 9])).unwrap();
    let r = ok_json(&["import-mnist", "--images", "img", "--labels", "lab", "--offset", "1", "--out-dir", "mn"], d);
    assert_eq!(r["count"], 2);
    assert_eq!(r["files"], serde_json::json!(["00001.json", "00002.json"]));

    let labels: Vec<u8> = serde_json::from_str(&fs::read_to_string(d.join("mn/labels.json")).unwrap()).unwrap();
    assert_eq!(labels, vec![0, 9]);
    let x: Vec<f64> = serde_json::from_str(&fs::read_to_string(d.join("mn/00001.json")).unwrap()).unwrap();
    assert_eq!(x.len(), 4);
    assert!((x[0] - (10.0 / 255.0 - 0.1307) / 0.3081).abs() < 1e-12);

    ok(&["gen", "--p0", "4", "--p", "3", "--K", "10", "--out", "net.json"], d);
    let p = ok_json(&["predict", "--net", "net.json", "--inputs", "mn"], d);
    assert_eq!(p["items"].as_array().unwrap().len(), 2);
}
