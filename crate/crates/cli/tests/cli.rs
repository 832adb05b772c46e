use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::{json, Value};

use pseudo_mot_cli::report::ReportFile;

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// Writes `instance` and runs `pmot <cmd> --input .. --output .. <extra>`.
fn run(name: &str, cmd: &str, instance: &Value, extra: &[&str]) -> (Output, PathBuf) {
    let input = scratch(&format!("{name}.json"));
    let output = scratch(&format!("{name}.out"));
    let _ = std::fs::remove_file(&output);
    std::fs::write(&input, serde_json::to_string_pretty(instance).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pmot"))
        .arg(cmd)
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(&output)
        .args(extra)
        .output()
        .unwrap();
    (out, output)
}

fn report(path: &PathBuf) -> ReportFile {
    ReportFile::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + b.abs())
}

#[test]
fn gaussian_forced_split() {
    let (out, path) = run("g1", "gaussian", &json!({"S": [[1, 0], [0, -1]], "Sigma": [[1, 0], [0, 1]]}), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&path);
    assert!(close(r.primal_value.unwrap(), 0.5));
    assert!(close(r.dual_value.unwrap(), 0.5));
    assert!(r.checks.iter().all(|c| c.passed));
    assert!(r.checks.iter().any(|c| c.name.contains("idempotent")));
    let g = r.gaussian.unwrap();
    assert_eq!(g.index, 1);
    assert_eq!(g.pca.len(), 2);
}

#[test]
fn gaussian_swap_form() {
    let (out, path) = run("g2", "gaussian", &json!({"S": [[0, 1], [1, 0]], "Sigma": [[1, 0], [0, 1]]}), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let q = report(&path).gaussian.unwrap().q;
    for row in &q {
        for v in row {
            assert!(close(*v, 0.5), "{q:?}");
        }
    }
}

#[test]
fn gaussian_rejects_singular_sigma() {
    let (out, _) = run("g3", "gaussian", &json!({"S": [[1, 0], [0, -1]], "Sigma": [[1, 0], [0, 0]]}), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Sigma must be positive definite"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_are_rejected() {
    let (out, _) = run("bad", "gaussian", &json!({"S": [[1]], "Sigma": [[1]], "extra": 1}), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown field"));
}

#[test]
fn solve_negative_definite_merges_to_barycenter() {
    let (out, path) = run("s1", "solve", &json!({"S": [[-1]], "nu": {"atoms": [[0], [2]]}}), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&path);
    let plan = r.plan.unwrap();
    assert_eq!(plan.len(), 1);
    assert!(close(plan[0].x[0], 1.0));
    assert!(close(r.primal_value.unwrap(), -0.5));
    assert_eq!(r.verdict.as_deref(), Some("certified"));
}

#[test]
fn solve_positive_definite_is_identity() {
    let inst = json!({"S": [[1]], "nu": {"atoms": [[-1], [0.5], [2]], "weights": [0.25, 0.5, 0.25]}});
    let (out, path) = run("s2", "solve", &inst, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&path);
    assert_eq!(r.plan.as_ref().unwrap().len(), 3);
    assert!(close(r.primal_value.unwrap(), 0.5 * (0.25 + 0.5 * 0.25 + 0.25 * 4.0)));
    assert_eq!(r.verdict.as_deref(), Some("certified"));
}

#[test]
fn solve_swap_form_two_atoms() {
    let inst = json!({"S": [[0, 1], [1, 0]], "nu": {"atoms": [[1, 1], [-1, -1]]}});
    let (out, path) = run("s3", "solve", &inst, &[]);
    let r = report(&path);
    assert!(close(r.primal_value.unwrap(), 1.0));
    // Only the non-maximal center set is available as a dual here.
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(r.verdict.as_deref(), Some("gap_open"));
    assert!(!stderr(&out).is_empty());
}

#[test]
fn solve_local_route_is_reproducible() {
    let atoms: Vec<Vec<f64>> = (0..24)
        .map(|i| {
            let t = i as f64 * 0.7;
            vec![t.sin() * 2.0, (1.3 * t).cos()]
        })
        .collect();
    let inst = json!({"S": [[1, 0], [0, -1]], "nu": {"atoms": atoms}, "config": {"max_clusters": 8}});
    let args = ["--seed", "7", "--restarts", "6", "--tol", "gap=1e-7"];
    let (a, pa) = run("s4a", "solve", &inst, &args);
    let (b, pb) = run("s4b", "solve", &inst, &args);
    assert_eq!(a.status.code(), b.status.code());
    let (mut ra, mut rb) = (report(&pa), report(&pb));
    assert_eq!(ra.seed, 7);
    assert_eq!(ra.tolerances["gap"], 1e-7);
    let solver = ra.solver.as_ref().unwrap();
    assert_eq!(solver.method, "local");
    assert_eq!(solver.cluster_cap, 8);
    assert_eq!(solver.restart_values.as_ref().unwrap().len(), 6);
    ra.timestamp = 0;
    rb.timestamp = 0;
    assert_eq!(ra.to_json(), rb.to_json());
}

#[test]
fn reports_round_trip() {
    let (_, path) = run("rt", "solve", &json!({"S": [[2, 0.5], [0.5, -1]], "nu": {"atoms": [[0, 1], [1, 0], [-1, -1]]}}), &[]);
    let text = std::fs::read_to_string(&path).unwrap();
    let parsed = ReportFile::from_json(&text).unwrap();
    assert_eq!(parsed.to_json(), text);
    assert_eq!(ReportFile::from_json(&parsed.to_json()).unwrap(), parsed);
    assert!(parsed.checks.iter().all(|c| c.tolerance.is_finite()));
}

fn minkowski_pair() -> Value {
    json!({
        "S": [[1, 0], [0, -1]],
        "nu": {"atoms": [[1, 0], [-1, 0]]},
        "plan": [
            {"x": [1, 0], "p": 0.5, "assignment": [[0, 0.5]]},
            {"x": [-1, 0], "p": 0.5, "assignment": [[1, 0.5]]}
        ],
        "G": {"type": "affine", "x0": [0, 0], "P": [[1, 0], [0, 0]]}
    })
}

#[test]
fn certify_matched_pair() {
    let (out, path) = run("c1", "certify", &minkowski_pair(), &["--eps", "0.001"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&path);
    assert!(close(r.primal_value.unwrap(), 0.5));
    assert!(close(r.dual_value.unwrap(), 0.5));
    assert!(r.gap.unwrap().abs() <= 1e-8);
    assert_eq!(r.eps, Some(0.001));
}

#[test]
fn certify_wrong_set_names_the_failing_check() {
    let mut inst = minkowski_pair();
    inst["G"] = json!({"type": "finite", "points": [[0, 0]]});
    let (out, path) = run("c2", "certify", &inst, &[]);
    let code = out.status.code().unwrap();
    assert!(code == 4 || code == 5, "exit {code}");
    assert!(stderr(&out).contains("support"), "{}", stderr(&out));
    assert!(report(&path).checks.iter().any(|c| !c.passed));
}

#[test]
fn certify_rejects_broken_barycenter() {
    let mut inst = minkowski_pair();
    inst["plan"][0]["x"] = json!([0.5, 0]);
    let (out, _) = run("c3", "certify", &inst, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!stderr(&out).is_empty());
}

fn csv_rows(path: &PathBuf) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn fitz_whole_line_gives_half_square() {
    let inst = json!({"S": [[1]], "G": {"type": "affine", "x0": [0], "P": [[1]]}});
    let (out, path) = run("f1", "fitz", &inst, &["--grid", "-2:2:9"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (header, rows) = csv_rows(&path);
    assert_eq!(header, ["y_1", "psi", "phi", "proj_index", "x_1", "lower_bound"]);
    assert_eq!(rows.len(), 9);
    for row in rows {
        let y: f64 = row[0].parse().unwrap();
        let psi: f64 = row[1].parse().unwrap();
        assert!(close(psi, 0.5 * y * y));
    }
}

#[test]
fn fitz_finite_set_probe() {
    let inst = json!({"S": [[0, 1], [1, 0]], "G": {"type": "finite", "points": [[0, 0], [1, 1]]}});
    let probes = scratch("f2-probes.csv");
    std::fs::write(&probes, "y1,y2\n2,0\n").unwrap();
    let trace = scratch("f2-trace.csv");
    let (out, path) = run("f2", "fitz", &inst, &["--probes", probes.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (_, rows) = csv_rows(&path);
    assert!(close(rows[0][2].parse().unwrap(), 1.0));
    // Every traced point lies on the level set S(y - z, y - z) = phi.
    let phi: f64 = rows[0][3].parse().unwrap();
    let (header, points) = csv_rows(&trace);
    assert_eq!(header, ["probe", "branch", "z_1", "z_2"]);
    assert!(!points.is_empty());
    for p in points {
        let (a, b) = (2.0 - p[2].parse::<f64>().unwrap(), -p[3].parse::<f64>().unwrap());
        assert!(close(2.0 * a * b, phi), "{a} {b} {phi}");
    }
}

#[test]
fn fitz_tracing_needs_the_plane() {
    let inst = json!({"S": [[1, 0, 0], [0, 1, 0], [0, 0, -1]], "G": {"type": "finite", "points": [[0, 0, 0]]}});
    let trace = scratch("f3-trace.csv");
    let (out, _) = run("f3", "fitz", &inst, &["--grid", "0:1:2", "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tracing supported for d = 2 only"));
}

#[test]
fn unknown_tolerance_name_is_a_validation_error() {
    let (out, _) = run("t1", "gaussian", &json!({"S": [[1]], "Sigma": [[1]]}), &["--tol", "nonsense=1e-3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!stderr(&out).is_empty());
}
