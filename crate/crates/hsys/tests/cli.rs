//! End-to-end tests of the hsys binary: exit codes, report schema,
//! determinism, and the verify round trip.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hsys(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsys"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn solve_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "solve", "--r0", "0.5", "--m", "7", "--nr", "33", "--ntheta", "28",
        "--seed", "3", "--out", out,
    ];
    v.extend_from_slice(extra);
    v
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_schema_valid_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsys(
        &solve_args(
            "run.json",
            &["--solution", "sol.json", "--mesh", "mesh.obj", "--ply", "mesh.ply", "--threshold"],
        ),
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["run.json", "sol.json", "mesh.obj", "mesh.ply"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }

    let report = read_json(&dir.path().join("run.json"));
    let schema_path =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/run_report.schema.json");
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&report)
        .map(|e| format!("{}: {}", e.instance_path(), e))
        .collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");

    assert_eq!(report["converged"], Value::Bool(true));
    assert_eq!(report["certificate"]["passed"], Value::Bool(true));
    assert_eq!(report["threshold"]["condition_met"], Value::Bool(true));
}

#[test]
fn repeated_solves_agree_except_timings() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hsys(&solve_args("a.json", &[]), dir.path()).status.success());
    assert!(hsys(&solve_args("b.json", &[]), dir.path()).status.success());
    let mut a = read_json(&dir.path().join("a.json"));
    let mut b = read_json(&dir.path().join("b.json"));
    a.as_object_mut().unwrap().remove("timings");
    b.as_object_mut().unwrap().remove("timings");
    assert_eq!(a, b);
}

#[test]
fn invalid_r0_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsys(
        &["solve", "--r0", "1.5", "--m", "7", "--out", "x.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn missing_m_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsys(&["threshold", "--r0", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn threshold_m1_never_meets_the_condition() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsys(
        &[
            "threshold", "--r0", "0.5", "--m", "1", "--nr", "33", "--ntheta", "28",
            "--max-iters", "400", "--out", "t.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = read_json(&dir.path().join("t.json"));
    assert_eq!(rep["condition_met"], Value::Bool(false));
}

#[test]
fn threshold_reports_the_analytic_e_xy() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsys(
        &[
            "threshold", "--r0", "0.5", "--m", "16", "--nr", "65", "--ntheta", "32",
            "--max-iters", "400", "--out", "t.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = read_json(&dir.path().join("t.json"));
    // E(x,y) = 2 pi (1 - r0^2) / (2 ||grad phi||) with the radial closed form:
    // ||grad phi||^2 = 2 pi int phi'^2 r dr, phi' = -r/2 + c1/r
    let r0: f64 = 0.5;
    let c1 = (1.0 - r0 * r0) / (4.0 * (1.0 / r0).ln());
    let quad = |f: &dyn Fn(f64) -> f64| {
        // dense trapezoid is plenty for a test oracle
        let n = 200_000;
        let h = (1.0 - r0) / n as f64;
        let mut s = 0.5 * (f(r0) + f(1.0));
        for i in 1..n {
            s += f(r0 + i as f64 * h);
        }
        s * h
    };
    let grad_phi_sq =
        2.0 * std::f64::consts::PI * quad(&|r| (-r / 2.0 + c1 / r).powi(2) * r);
    let e_xy = 2.0 * std::f64::consts::PI * (1.0 - r0 * r0) / (2.0 * grad_phi_sq.sqrt());
    let got = rep["e_xy"].as_f64().unwrap();
    assert!((got - e_xy).abs() < 1e-8 * e_xy, "got {got}, oracle {e_xy}");
}

#[test]
fn verify_round_trips_the_solve_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = hsys(
        &solve_args("run.json", &["--solution", "sol.json"]),
        dir.path(),
    );
    assert!(out.status.success());
    let out = hsys(
        &["verify", "--input", "sol.json", "--out", "cert.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("run.json"));
    let cert = read_json(&dir.path().join("cert.json"));
    for key in [
        "el_residual_interior", "bc_phi", "bc_neumann_a", "bc_neumann_b",
        "grad_orthogonality", "norm_balance", "mean_a", "mean_b",
    ] {
        let a = report["certificate"][key].as_f64().unwrap();
        let b = cert[key].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{key}: {a} vs {b}");
    }
}

#[test]
fn verify_flags_the_coordinate_pair() {
    use hsys::equivariance::{FieldPair, SymmetryOrder};
    use hsys::grid::{build_grid, GridSpec};

    let dir = tempfile::tempdir().unwrap();
    let g = build_grid(GridSpec::new(0.5, 33, 28).unwrap()).unwrap();
    let pair = FieldPair::coordinates(&g);
    let path = dir.path().join("xy.json");
    hsys::report::save_pair(&pair, SymmetryOrder::new(1).unwrap(), 0.0, 0.0, &path).unwrap();
    let out = hsys(&["verify", "--input", "xy.json"], dir.path());
    assert!(out.status.success());
    let cert: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cert["passed"], Value::Bool(false));
    // dx/dn = cos(theta) on the rings: an O(1) Neumann violation
    assert!(cert["bc_neumann_a"].as_f64().unwrap() > 0.9);
    assert!(cert["el_residual_interior"].as_f64().unwrap() > 1e-3);
}

#[test]
fn truncated_solution_file_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hsys(
        &solve_args("run.json", &["--solution", "sol.json"]),
        dir.path()
    )
    .status
    .success());
    let p = dir.path().join("sol.json");
    let text = std::fs::read_to_string(&p).unwrap();
    std::fs::write(&p, &text[..text.len() / 2]).unwrap();
    let out = hsys(&["verify", "--input", "sol.json"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn hsys_threads_env_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hsys"))
        .args(solve_args("one.json", &[]))
        .env("HSYS_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut single = read_json(&dir.path().join("one.json"));
    assert!(hsys(&solve_args("many.json", &[]), dir.path()).status.success());
    let mut multi = read_json(&dir.path().join("many.json"));
    single.as_object_mut().unwrap().remove("timings");
    multi.as_object_mut().unwrap().remove("timings");
    // thread count must not change results
    assert_eq!(single, multi);
}
