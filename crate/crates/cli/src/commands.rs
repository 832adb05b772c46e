use std::fmt::Write as _;
use std::path::Path;

use pseudo_mot::checks::{all_passed, Check};
use pseudo_mot::fitzpatrick::{psi, FitzValue, MonotoneSet};
use pseudo_mot::gaussian::{decompose, pca_directions};
use pseudo_mot::linalg::{norm_sq, Matrix};
use pseudo_mot::measures::{DiscreteMeasure, MartingalePlan};
use pseudo_mot::solver::{
    certify as certify_plan, dual_affine_candidate, solve_exact, solve_local, Certificate, SolverConfig, Verdict,
    WeakDuality, DEFAULT_EPS,
};
use pseudo_mot::space::SSpace;
use pseudo_mot::Tolerances;

use crate::instance::{plan_spec, set_spec, InstanceFile};
use crate::report::{CandidateRecord, CheckRecord, GaussianRecord, PcaRecord, ReportFile, SolverRecord};
use crate::{CliError, Common, FitzArgs, EXIT_GAP_OPEN, EXIT_NUMERICAL, EXIT_OK, EXIT_VIOLATED};

const MAX_GRID_NODES: usize = 1_000_000;

/// Effective settings: instance config first, then command-line flags.
struct Settings {
    tol: Tolerances,
    cfg: SolverConfig,
    eps: f64,
}

fn settings(common: &Common, inst: &InstanceFile) -> Result<Settings, CliError> {
    let mut tol = Tolerances::default();
    let mut cfg = SolverConfig::default();
    if let Some(c) = &inst.config {
        for (name, value) in &c.tolerances {
            tol.set(name, *value)?;
        }
        cfg.max_clusters = c.max_clusters.unwrap_or(cfg.max_clusters);
        cfg.exact_atom_cap = c.exact_atom_cap.unwrap_or(cfg.exact_atom_cap);
        cfg.restarts = c.restarts.unwrap_or(cfg.restarts);
        cfg.max_iterations = c.max_iterations.unwrap_or(cfg.max_iterations);
        cfg.seed = c.seed.unwrap_or(cfg.seed);
        cfg.fractional_split = c.fractional_split.unwrap_or(cfg.fractional_split);
    }
    for item in &common.tol {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("--tol expects NAME=VALUE, got {item:?}")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::validation(format!("--tol {name}: {value:?} is not a number")))?;
        tol.set(name.trim(), value)?;
    }
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.max_clusters = common.max_clusters.unwrap_or(cfg.max_clusters);
    cfg.restarts = common.restarts.unwrap_or(cfg.restarts);
    cfg.tolerances = tol;
    cfg.validate()?;
    let eps = common.eps.unwrap_or(DEFAULT_EPS);
    if !(eps.is_finite() && eps > 0.0) {
        return Err(CliError::validation(format!("--eps must be finite and positive, got {eps}")));
    }
    Ok(Settings { tol, cfg, eps })
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn gaussian(common: &Common) -> Result<i32, CliError> {
    let inst = InstanceFile::read(&common.input)?;
    let st = settings(common, &inst)?;
    let sp = inst.space(&st.tol)?;
    let sigma = inst.sigma()?;
    let mean = inst.mean.clone().unwrap_or_else(|| vec![0.0; sp.dim()]);
    let dec = decompose(&sp, &sigma, &mean, &st.tol)?;
    let pca = pca_directions(&sp, &sigma, &st.tol)?;
    let checks = dec.invariant_checks(&sp, &st.tol);

    let mut report = ReportFile::new("gaussian", st.cfg.seed, &st.tol);
    report.primal_value = finite(dec.primal_value);
    report.dual_value = finite(dec.dual_value);
    report.gap = finite(dec.dual_value - dec.primal_value);
    report.checks = checks.iter().map(CheckRecord::from).collect();
    report.set = dec.optimal_set(&sp, &st.tol).ok().as_ref().and_then(set_spec);
    report.gaussian = Some(GaussianRecord {
        q: dec.q.to_rows(),
        r: dec.r.to_rows(),
        p: dec.p.to_rows(),
        v: dec.v.to_rows(),
        lambda: dec.lambda.clone(),
        index: dec.index,
        pca: pca
            .into_iter()
            .map(|(eigenvalue, direction)| PcaRecord { eigenvalue, direction })
            .collect(),
    });
    report.write(&common.output)?;
    if all_passed(&checks) {
        Ok(EXIT_OK)
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        eprintln!("error: invariant checks failed: {}", failed.join(", "));
        Ok(EXIT_NUMERICAL)
    }
}

pub fn solve(common: &Common) -> Result<i32, CliError> {
    let inst = InstanceFile::read(&common.input)?;
    let st = settings(common, &inst)?;
    let sp = inst.space(&st.tol)?;
    let nu = inst.measure()?;

    let (plan, record) = if nu.len() <= st.cfg.exact_atom_cap {
        let sol = solve_exact(&sp, &nu, &st.cfg)?;
        let record = SolverRecord {
            method: "exact".into(),
            value: sol.value,
            cluster_cap: nu.len(),
            hard_value: Some(sol.hard_value),
            refined_value: Some(sol.refined_value),
            partitions: Some(sol.partitions),
            best_restart: None,
            restart_values: None,
            candidates: Vec::new(),
            chosen_candidate: None,
        };
        (sol.plan, record)
    } else {
        let sol = solve_local(&sp, &nu, &st.cfg)?;
        let record = SolverRecord {
            method: "local".into(),
            value: sol.value,
            cluster_cap: sol.cluster_cap,
            hard_value: None,
            refined_value: None,
            partitions: None,
            best_restart: Some(sol.best_restart),
            restart_values: Some(sol.restart_values),
            candidates: Vec::new(),
            chosen_candidate: None,
        };
        (sol.plan, record)
    };

    let mut report = ReportFile::new("solve", st.cfg.seed, &st.tol);
    let mut candidates: Vec<(&str, MonotoneSet)> = Vec::new();
    if let Ok(c) = dual_affine_candidate(&sp, &nu, &st.tol) {
        report.affine_candidate = Some(CandidateRecord {
            dual_value: c.dual_value,
            martingale_residual: c.martingale_residual,
        });
        candidates.push(("affine", c.set));
    }
    if sp.is_positive_definite() {
        if let Ok(g) = MonotoneSet::affine(&sp, vec![0.0; sp.dim()], Matrix::identity(sp.dim()), &st.tol) {
            candidates.push(("whole_space", g));
        }
    }
    if sp.is_negative_definite() {
        if let Ok(g) = MonotoneSet::finite(&sp, vec![nu.barycenter()], &st.tol) {
            candidates.push(("barycenter", g));
        }
    }
    if let Ok(g) = MonotoneSet::finite(&sp, plan.centers(), &st.tol) {
        candidates.push(("plan_centers", g));
    }

    let mut certs: Vec<(&str, Certificate)> = Vec::new();
    for (name, g) in &candidates {
        if let Ok(c) = certify_plan(&sp, &plan, g, &nu, st.eps, &st.tol) {
            certs.push((name, c));
        }
    }
    let chosen = certs
        .iter()
        .position(|(_, c)| c.verdict == Verdict::Certified)
        .or_else(|| best_gap(&certs, |c| c.verdict != Verdict::Violated))
        .or_else(|| best_gap(&certs, |_| true));

    let mut record = record;
    record.candidates = certs.iter().map(|(n, _)| n.to_string()).collect();
    report.primal_value = finite(plan.objective(&sp));
    report.plan = Some(plan_spec(&plan));
    report.eps = Some(st.eps);
    report.checks = plan_checks(&plan, &nu, &st.tol);
    let certified = match chosen {
        Some(i) => {
            let (name, cert) = &certs[i];
            record.chosen_candidate = Some(name.to_string());
            fill_certificate(&mut report, cert, &st.tol);
            cert.verdict == Verdict::Certified
        }
        None => false,
    };
    report.verdict = Some(if certified { "certified" } else { "gap_open" }.to_string());
    report.solver = Some(record);
    report.write(&common.output)?;
    if certified {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "gap open: no candidate dual closes the gap (gap {})",
            report.gap.map_or("unavailable".to_string(), |g| format!("{g:e}"))
        );
        Ok(EXIT_GAP_OPEN)
    }
}

fn best_gap(certs: &[(&str, Certificate)], keep: impl Fn(&Certificate) -> bool) -> Option<usize> {
    certs
        .iter()
        .enumerate()
        .filter(|(_, (_, c))| keep(c) && c.gap.is_some())
        .min_by(|a, b| a.1 .1.gap.unwrap().total_cmp(&b.1 .1.gap.unwrap()))
        .map(|(i, _)| i)
}

pub fn certify(common: &Common) -> Result<i32, CliError> {
    let inst = InstanceFile::read(&common.input)?;
    let st = settings(common, &inst)?;
    let sp = inst.space(&st.tol)?;
    let nu = inst.measure()?;
    let plan = inst.plan()?;
    plan.validate(&nu, &st.tol)?;
    let g = inst.set(&sp, &st.tol)?;
    let cert = certify_plan(&sp, &plan, &g, &nu, st.eps, &st.tol)?;

    let mut report = ReportFile::new("certify", st.cfg.seed, &st.tol);
    report.primal_value = finite(cert.primal_value);
    report.plan = Some(plan_spec(&plan));
    report.eps = Some(st.eps);
    report.checks = plan_checks(&plan, &nu, &st.tol);
    fill_certificate(&mut report, &cert, &st.tol);
    report.set = inst.g.clone();
    report.verdict = Some(cert.verdict.as_str().to_string());
    report.write(&common.output)?;
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    match cert.verdict {
        Verdict::Certified => Ok(EXIT_OK),
        Verdict::GapOpen => {
            eprintln!("gap open: {}", describe(&report, &failed));
            Ok(EXIT_GAP_OPEN)
        }
        Verdict::Violated => {
            eprintln!("certificate violated: {}", describe(&report, &failed));
            Ok(EXIT_VIOLATED)
        }
    }
}

fn describe(report: &ReportFile, failed: &[&str]) -> String {
    let gap = report.gap.map_or("unavailable".to_string(), |g| format!("{g:e}"));
    if failed.is_empty() {
        format!("gap {gap}")
    } else {
        format!("gap {gap}; failing checks: {}", failed.join(", "))
    }
}

fn plan_checks(plan: &MartingalePlan, nu: &DiscreteMeasure, tol: &Tolerances) -> Vec<CheckRecord> {
    vec![CheckRecord::from(&Check::le(
        "plan y-marginal deviation",
        plan.marginal_deviation(nu),
        tol.martingale,
    ))]
}

fn fill_certificate(report: &mut ReportFile, cert: &Certificate, tol: &Tolerances) {
    let dual = cert.dual_value.finite();
    report.dual_value = dual.and_then(finite);
    report.gap = cert.gap.and_then(finite);
    report.set = set_spec(&cert.set);
    let scale = 1.0 + dual.map_or(0.0, f64::abs);
    let mut checks = vec![Check::le("dual finite", if dual.is_some() { 0.0 } else { 1.0 }, 0.0)];
    let gap = cert.gap.unwrap_or(f64::INFINITY);
    let weak = match cert.weak_duality {
        WeakDuality::Holds => Check::ge("weak duality", gap, -tol.weak * scale),
        WeakDuality::Violated => Check {
            passed: false,
            ..Check::ge("weak duality", gap, -tol.weak * scale)
        },
        WeakDuality::Inconclusive => Check {
            passed: true,
            ..Check::ge("weak duality (inconclusive)", gap, -tol.weak * scale)
        },
    };
    checks.push(weak);
    checks.push(Check::le("duality gap", gap, tol.gap * scale));
    let worst = cert
        .support_check
        .iter()
        .map(|c| c.residual.map_or(f64::INFINITY, f64::abs))
        .fold(0.0, f64::max);
    let support_tol = cert.support_check.iter().map(|c| c.tolerance).fold(0.0, f64::max);
    checks.push(Check {
        passed: cert.support_passed(),
        ..Check::le("support", worst, support_tol)
    });
    for c in cert.support_check.iter().filter(|c| !c.passed) {
        checks.push(Check {
            passed: false,
            ..Check::le(
                format!("support (cluster {}, atom {}{})", c.cluster, c.atom, if c.member { "" } else { ", x not in G" }),
                c.residual.map_or(f64::INFINITY, f64::abs),
                c.tolerance,
            )
        });
    }
    let failing = cert.forward_check.iter().filter(|c| !c.passed).count();
    checks.push(Check::le(format!("forward (eps {})", cert.eps), failing as f64, 0.0));
    for c in cert.forward_check.iter().filter(|c| !c.passed) {
        checks.push(Check::le(
            format!("forward (cluster {}, atoms {:?})", c.cluster, c.failing_atoms),
            c.failing_atoms.len() as f64,
            0.0,
        ));
    }
    checks.push(Check::ge("set known maximal", if cert.set_maximal { 1.0 } else { 0.0 }, 1.0));
    checks.push(Check::ge("psi exact", if cert.psi_exact { 1.0 } else { 0.0 }, 1.0));
    report.checks.extend(checks.iter().map(CheckRecord::from));
}

pub fn fitz(args: &FitzArgs) -> Result<i32, CliError> {
    let common = &args.common;
    let inst = InstanceFile::read(&common.input)?;
    let st = settings(common, &inst)?;
    let sp = inst.space(&st.tol)?;
    let d = sp.dim();
    if args.trace.is_some() && d != 2 {
        return Err(CliError::validation("tracing supported for d = 2 only"));
    }
    let g = inst.set(&sp, &st.tol)?;
    let probes = match (&args.probes, &args.grid) {
        (Some(path), _) => read_probes(path, d)?,
        (None, Some(spec)) => grid_probes(spec, d)?,
        (None, None) => return Err(CliError::validation("fitz needs --probes PATH or --grid LO:HI:N")),
    };

    let mut csv = String::new();
    let ys: Vec<String> = (1..=d).map(|i| format!("y_{i}")).collect();
    let xs: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    writeln!(csv, "{},psi,phi,proj_index,{},lower_bound", ys.join(","), xs.join(",")).unwrap();
    let mut phis = Vec::with_capacity(probes.len());
    for y in &probes {
        let eval = psi(&sp, &g, y, &st.tol)?;
        let yy = sp.scalar_square(y)?;
        let (psi_s, phi, phi_s) = match eval.value {
            FitzValue::Finite(v) => (v.to_string(), Some(yy - 2.0 * v), (yy - 2.0 * v).to_string()),
            FitzValue::PlusInfinity => ("inf".to_string(), None, "-inf".to_string()),
        };
        phis.push(phi);
        let head = format!("{},{psi_s},{phi_s}", join(y));
        let lb = eval.lower_bound;
        if eval.maximizers.is_empty() {
            writeln!(csv, "{head},,{},{lb}", ",".repeat(d - 1)).unwrap();
        }
        for (i, x) in eval.maximizers.iter().enumerate() {
            writeln!(csv, "{head},{i},{},{lb}", join(x)).unwrap();
        }
    }
    write_text(&common.output, &csv)?;
    if let Some(path) = &args.trace {
        write_text(path, &trace_level_sets(&sp, &probes, &phis, args.trace_samples.max(2)))?;
    }
    Ok(EXIT_OK)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))
}

fn read_probes(path: &Path, d: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CliError::validation("probe file is empty"))?;
    if header.split(',').count() != d {
        return Err(CliError::validation(format!("probe header must have {d} columns")));
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let values: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::validation(format!("probe row {} is not numeric", row + 1)))?;
        if values.len() != d || values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::validation(format!("probe row {} must have {d} finite values", row + 1)));
        }
        out.push(values);
    }
    if out.is_empty() {
        return Err(CliError::validation("probe file has no rows"));
    }
    Ok(out)
}

fn grid_probes(spec: &str, d: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let bad = || CliError::validation(format!("--grid expects LO:HI:N, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) || n == 0 {
        return Err(bad());
    }
    let total = (0..d).try_fold(1usize, |acc, _| acc.checked_mul(n)).filter(|t| *t <= MAX_GRID_NODES);
    let Some(total) = total else {
        return Err(CliError::validation(format!("grid exceeds {MAX_GRID_NODES} probe points")));
    };
    let axis: Vec<f64> = (0..n)
        .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect();
    Ok((0..total)
        .map(|mut idx| {
            let mut y = vec![0.0; d];
            for k in (0..d).rev() {
                y[k] = axis[idx % n];
                idx /= n;
            }
            y
        })
        .collect())
}

/// Samples of `{z : S(y - z, y - z) = phi}` for planar S, parametrized in
/// canonical coordinates where the form is `c_1^2 + c_2^2`, `c_1^2 - c_2^2`
/// or `-c_1^2 - c_2^2`.
fn trace_level_sets(sp: &SSpace, probes: &[Vec<f64>], phis: &[Option<f64>], samples: usize) -> String {
    let frame = sp.canonical_frame();
    let m = sp.index();
    let mut csv = String::from("probe,branch,z_1,z_2\n");
    for (i, (y, phi)) in probes.iter().zip(phis).enumerate() {
        let Some(phi) = *phi else { continue };
        let zero = phi.abs() <= 1e-12 * (1.0 + norm_sq(y));
        let r = phi.abs().sqrt();
        let ts = |lo: f64, hi: f64| (0..samples).map(move |s| lo + (hi - lo) * s as f64 / (samples - 1) as f64);
        let mut branches: Vec<Vec<[f64; 2]>> = Vec::new();
        match m {
            2 | 0 if zero => branches.push(vec![[0.0, 0.0]]),
            2 | 0 if (m == 2) == (phi > 0.0) => {
                branches.push(ts(0.0, std::f64::consts::TAU).map(|t| [r * t.cos(), r * t.sin()]).collect())
            }
            2 | 0 => {}
            _ if zero => {
                let reach = 2.0 * (1.0 + norm_sq(y).sqrt());
                for s in [1.0, -1.0] {
                    branches.push(ts(-reach, reach).map(|t| [t, s * t]).collect());
                }
            }
            _ => {
                for s in [1.0, -1.0] {
                    branches.push(
                        ts(-2.0, 2.0)
                            .map(|t| if phi > 0.0 { [s * r * t.cosh(), r * t.sinh()] } else { [r * t.sinh(), s * r * t.cosh()] })
                            .collect(),
                    );
                }
            }
        }
        for (b, branch) in branches.iter().enumerate() {
            for c in branch {
                let w = frame.from_canonical(c);
                writeln!(csv, "{i},{b},{},{}", y[0] - w[0], y[1] - w[1]).unwrap();
            }
        }
    }
    csv
}
