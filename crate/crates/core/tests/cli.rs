use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bmo_core::field::TensorField;
use bmo_core::gf1;
use bmo_core::Grid;
use serde_json::Value;

fn bmo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmo")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run_config(dir: &Path, body: &str, extra: &[&str]) -> Output {
    let cfg = write(dir, "config.json", body);
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--no-timestamp"];
    args.extend_from_slice(extra);
    bmo(&args)
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

const NONCONVEX_1D: &str = r#"{"command": "stress-test", "seed": 1, "output": "stress.json",
    "params": {"problem": {"grid": {"shape": [24]}, "components": 1,
               "integrand": {"family": "double-well", "k": 2},
               "bc": {"kind": "dirichlet", "data": {"matrix": [[0.8]]}}},
               "delta": 2.0, "n_samples": 200}}"#;

#[test]
fn constant_gf1_field_has_zero_seminorm() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::unit_box(vec![6, 6]).unwrap();
    let f = TensorField::from_fn(grid, 1, |_, out| out.fill(-1.25)).unwrap();
    gf1::write(&dir.path().join("c.gf1"), &f).unwrap();
    let out = run_config(
        dir.path(),
        r#"{"command": "bmo-norm", "output": "norm.json", "params": {"input": {"kind": "file", "path": "c.gf1"}}}"#,
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "norm.json");
    assert_eq!(r["result"]["report"]["seminorm"].as_f64(), Some(0.0));
    assert!(r["input_files"]["c.gf1"].as_str().unwrap().len() == 64);
    assert!(r.get("timestamp_unix").is_none());
}

#[test]
fn taylor_check_with_g_equal_f() {
    let dir = tempfile::tempdir().unwrap();
    let field = r#"{"kind": "log", "grid": {"shape": [8, 8]}, "rows": 1, "anchor": [3, 4]}"#;
    let out = run_config(
        dir.path(),
        &format!(
            r#"{{"command": "taylor-check", "output": "t.json", "params": {{
                "integrand": {{"family": "p-growth", "parameters": {{"m": 4}}, "k": 3}},
                "f": {field}, "g": {field}, "M": 0.5}}}}"#
        ),
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "t.json");
    assert_eq!(r["result"]["report"]["identity_gap"].as_f64(), Some(0.0));
    assert_eq!(r["result"]["report"]["inequality_margin"].as_f64(), Some(0.0));
}

#[test]
fn nonconvex_stress_above_certified_delta_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), NONCONVEX_1D, &["--csv"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "stress.json");
    assert!(r["result"]["stress"]["failures"].as_u64().unwrap() > 0);
    assert!(!r["violations"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(dir.path().join("stress.csv")).unwrap();
    assert!(csv.starts_with("id,generator,rho,grad_bmo,grad_l2_sq,grad_l3_cubed,energy_gap,margin"));
    assert_eq!(csv.lines().count(), 201);

    // The sweep on the same instance certifies a smaller radius.
    let sweep = NONCONVEX_1D.replace(r#""delta": 2.0"#, r#""delta": "sweep", "sweep_upper": 2.0"#);
    let out = run_config(dir.path(), &sweep, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "stress.json");
    let certified = r["result"]["sweep"]["certified_delta"].as_f64().unwrap();
    assert!(certified > 0.0 && certified < 2.0, "{certified}");
}

#[test]
fn quadratic_el_solve_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(
        dir.path(),
        r#"{"command": "el-solve", "output": "el.json", "params": {
            "grid": {"shape": [8, 8]}, "components": 1,
            "integrand": {"family": "quadratic", "k": 2},
            "bc": {"kind": "dirichlet", "data": {"matrix": [[1.0, -0.5]], "offset": [0.2]}}}}"#,
        &["--csv"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "el.json");
    assert_eq!(r["result"]["status"], "converged");
    assert!(r["result"]["el_residual_norm"].as_f64().unwrap() < 1e-10);
    let lambda = r["result"]["coercivity_4a"].as_f64().unwrap();
    assert!((lambda - 1.0).abs() < 1e-8, "{lambda}");
    let csv = std::fs::read_to_string(dir.path().join("el.csv")).unwrap();
    assert!(csv.starts_with("cell,x,y,u0"));
    assert_eq!(csv.lines().count(), 65);
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(
        dir.path(),
        r#"{"command": "interp-calibrate", "params": {"grid": {"shape": [8]}, "rows": 1, "p": 2, "qq": 3}}"#,
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("qq"), "{err}");

    let out = run_config(dir.path(), r#"{"command": "bmo-norm", "params": {"input": {"kind": "file", "path": "absent.gf1"}}}"#, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.gf1"));

    let out = run_config(
        dir.path(),
        r#"{"command": "taylor-check", "params": {"integrand": {"family": "cubic", "k": 2},
            "f": {"kind": "constant", "grid": {"shape": [4]}, "rows": 1, "value": 0},
            "g": {"kind": "constant", "grid": {"shape": [4]}, "rows": 1, "value": 0}, "M": 1}}"#,
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("double-well"));

    let out = bmo(&["--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn worker_count_and_seed_flags() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"command": "interp-calibrate", "seed": 4, "output": "cal.json",
        "params": {"grid": {"shape": [10, 10]}, "rows": 2, "p": 2, "q": 4, "random_count": 6}}"#;
    let one = run_config(dir.path(), body, &["--workers", "1"]);
    assert_eq!(one.status.code(), Some(0));
    let a = std::fs::read(dir.path().join("cal.json")).unwrap();
    run_config(dir.path(), body, &["--workers", "3"]);
    let b = std::fs::read(dir.path().join("cal.json")).unwrap();
    assert_eq!(a, b);
    run_config(dir.path(), body, &["--seed", "5"]);
    let c = report(dir.path(), "cal.json");
    assert_eq!(c["seed"], 5);
    assert_ne!(serde_json::to_vec(&c).unwrap(), a);

    let cfg = write(dir.path(), "config.json", body);
    let out = bmo(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(report(dir.path(), "cal.json")["timestamp_unix"].as_u64().is_some());
}

#[test]
fn report_goes_to_stdout_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(
        dir.path(),
        r#"{"command": "bmo-norm", "params": {"input": {"kind": "step", "grid": {"shape": [2]}, "rows": 1, "axis": 0}}}"#,
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["result"]["report"]["seminorm"].as_f64(), Some(1.0));
    assert_eq!(r["result"]["report"]["bmo_norm"].as_f64(), Some(1.0));
}
