use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tomo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomo")).args(args).env("TOMO_THREADS", "1").output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = tomo(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn fails(args: &[&str]) -> Value {
    let out = tomo(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"].clone()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut a = vec!["gen-state"];
    a.extend_from_slice(args);
    a.extend_from_slice(&["--out", s(&path)]);
    ok(&a);
    path
}

#[test]
fn fock_round_trip_through_quadratures() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "fock.json", &["fock", "--dim", "4", "--n", "2"]);
    let fwd = dir.path().join("fwd");
    let m = ok(&["forward", s(&state), "--target", "quadrature", "--angles", "1", "--grid", "-8:8:161", "--out", s(&fwd)]);
    let manifest = m["manifest"].as_str().unwrap().to_string();
    let report = dir.path().join("report.json");
    ok(&["reconstruct", &manifest, "--method", "quad-full", "--dim", "4", "--out", s(&report)]);
    let v = ok(&["verify", s(&report), s(&state)]);
    assert!(v["max_abs_error"].as_f64().unwrap() < 1e-8, "{v}");
}

#[test]
fn finite_angle_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "r.json", &["random", "--dim", "3", "--seed", "4"]);
    let fwd = dir.path().join("fwd");
    let m = ok(&["forward", s(&state), "--target", "quadrature", "--angles", "3", "--grid", "-8:8:81", "--out", s(&fwd)]);
    let report = dir.path().join("report.json");
    ok(&["reconstruct", m["manifest"].as_str().unwrap(), "--method", "quad-finite", "--out", s(&report)]);
    let v = ok(&["verify", s(&report), s(&state)]);
    assert!(v["max_abs_error"].as_f64().unwrap() < 1e-8, "{v}");
}

#[test]
fn lambda_integration_rejects_positive_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "vac.json", &["fock", "--dim", "2"]);
    let fwd = dir.path().join("fwd");
    let m = ok(&[
        "forward", s(&state), "--target", "lambda", "--lambda", "0.3", "--grid", "0:4:21,0:6:4", "--out", s(&fwd),
    ]);
    let e = fails(&[
        "reconstruct",
        m["manifest"].as_str().unwrap(),
        "--method",
        "lambda-int",
        "--dim",
        "2",
        "--lambda",
        "0.3",
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(e["kind"], "validity");
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("diverges") && msg.contains("vacuum") && msg.contains("-1 < lambda < 0"), "{msg}");
}

#[test]
fn lambda_methods_from_grid() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "coh.json", &["coherent", "--dim", "12", "--alpha", "0.3,0.2"]);
    for (lambda, method) in [("-0.5", "lambda-int"), ("0.3", "lambda-diff"), ("0", "q-function")] {
        let fwd = dir.path().join(format!("fwd{lambda}"));
        let m = ok(&[
            "forward", s(&state), "--target", "lambda", "--lambda", lambda, "--grid", "0:3:7,0:6:4", "--out", s(&fwd),
        ]);
        let report = dir.path().join(format!("{method}.json"));
        ok(&["reconstruct", m["manifest"].as_str().unwrap(), "--method", method, "--dim", "12", "--out", s(&report)]);
        let v = ok(&["verify", s(&report), s(&state)]);
        assert!(v["max_abs_error"].as_f64().unwrap() < 1e-8, "{method}: {v}");
        assert_eq!(v["method"], if method == "lambda-int" { "lambda-integration" } else if method == "q-function" { "q-function" } else { "lambda-differentiation" });
    }
}

#[test]
fn sampled_lambda_integration() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "vac.json", &["fock", "--dim", "2"]);
    let fwd = dir.path().join("fwd");
    let m = ok(&[
        "forward", s(&state), "--target", "lambda", "--lambda", "-0.5", "--grid", "0:8:801,0:6.283185307179586:9",
        "--out", s(&fwd),
    ]);
    let report = dir.path().join("r.json");
    ok(&[
        "reconstruct",
        m["manifest"].as_str().unwrap(),
        "--method",
        "lambda-int",
        "--dim",
        "2",
        "--use-samples",
        "--out",
        s(&report),
    ]);
    let v = ok(&["verify", s(&report), s(&state)]);
    assert!(v["max_abs_error"].as_f64().unwrap() < 1e-4, "{v}");
}

#[test]
fn differentiation_override_gate() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "f.json", &["fock", "--dim", "5", "--n", "3"]);
    let fwd = dir.path().join("fwd");
    let m = ok(&[
        "forward", s(&state), "--target", "lambda", "--lambda", "-1", "--grid", "0:2:3,0:6:4", "--out", s(&fwd),
    ]);
    let manifest = m["manifest"].as_str().unwrap();
    let report = dir.path().join("r.json");
    let e = fails(&["reconstruct", manifest, "--method", "lambda-diff", "--dim", "5", "--out", s(&report)]);
    assert!(e["message"].as_str().unwrap().contains("|lambda| < 1/2"), "{e}");
    ok(&["reconstruct", manifest, "--method", "lambda-diff", "--dim", "5", "--allow-lambda-override", "--out", s(&report)]);
    let v = ok(&["verify", s(&report), s(&state)]);
    assert!(v["max_abs_error"].as_f64().unwrap() < 1e-8, "{v}");
}

#[test]
fn verify_rejects_dim_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "fock.json", &["fock", "--dim", "3", "--n", "1"]);
    let other = gen(dir.path(), "other.json", &["fock", "--dim", "4", "--n", "1"]);
    let fwd = dir.path().join("fwd");
    let m = ok(&["forward", s(&state), "--target", "quadrature", "--angles", "1", "--grid", "-6:6:61", "--out", s(&fwd)]);
    let report = dir.path().join("report.json");
    ok(&["reconstruct", m["manifest"].as_str().unwrap(), "--method", "quad-full", "--dim", "3", "--out", s(&report)]);
    let e = fails(&["verify", s(&report), s(&other)]);
    assert_eq!(e["kind"], "schema");
}

#[test]
fn missing_file_is_reported() {
    let e = fails(&["verify", "/nonexistent/report.json", "/nonexistent/state.json"]);
    assert_eq!(e["kind"], "io");
}

#[test]
fn shift_and_kernel_build() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "coh.json", &["coherent", "--dim", "16", "--alpha", "0.5,0"]);
    let fwd = dir.path().join("fwd");
    let m = ok(&[
        "forward", s(&state), "--target", "lambda", "--lambda", "-0.5", "--coords", "cartesian", "--grid",
        "-6:6:61,-6:6:61", "--out", s(&fwd),
    ]);
    let sh = dir.path().join("shift");
    let v = ok(&[
        "shift-lambda", m["manifest"].as_str().unwrap(), "--lambda", "-0.5", "--lambda-prime", "0", "--out", s(&sh),
    ]);
    let text = std::fs::read_to_string(v["manifest"].as_str().unwrap()).unwrap();
    assert!(text.contains("lambda_to") && text.contains("regularization_cutoff"));

    let qd = dir.path().join("qd");
    let q = ok(&["forward", s(&state), "--target", "quadrature", "--angles", "1", "--grid", "-8:8:41", "--out", s(&qd)]);
    let kb = dir.path().join("kb");
    ok(&[
        "kernel-build", q["manifest"].as_str().unwrap(), "--lambda", "0", "--grid", "-1:1:3,-1:1:3", "--out", s(&kb),
    ]);
    let e = fails(&[
        "shift-lambda", m["manifest"].as_str().unwrap(), "--lambda", "0", "--lambda-prime", "-0.5", "--out", s(&sh),
    ]);
    assert_eq!(e["kind"], "domain");
}

#[test]
fn outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let state = gen(dir.path(), "r.json", &["random", "--dim", "4", "--seed", "9"]);
    let again = gen(dir.path(), "r2.json", &["random", "--dim", "4", "--seed", "9"]);
    assert_eq!(std::fs::read(&state).unwrap(), std::fs::read(&again).unwrap());
    let mut reports = Vec::new();
    for run in 0..2 {
        let fwd = dir.path().join(format!("fwd{run}"));
        let m = ok(&["forward", s(&state), "--target", "quadrature", "--angles", "5", "--grid", "-6:6:31", "--out", s(&fwd)]);
        let report = dir.path().join(format!("report{run}.json"));
        ok(&["reconstruct", m["manifest"].as_str().unwrap(), "--method", "quad-full", "--dim", "4", "--out", s(&report)]);
        reports.push(std::fs::read(&report).unwrap());
        let csv = std::fs::read(fwd.join("quadrature_angle2.csv")).unwrap();
        reports.push(csv);
    }
    assert_eq!(reports[0], reports[2]);
    assert_eq!(reports[1], reports[3]);
}
