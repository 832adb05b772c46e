//! Discrete solvers, optimality certificates and diagnostics.
//!
//! The primal problem for `nu = sum_j q_j delta_{y_j}` is
//! `max (1/2) sum_k p_k S(x_k, x_k)` over martingale plans. A plan is stored
//! as clusters `x_k` with masses `w_jk`; `x_k` is always the barycenter of
//! its mass, so every emitted plan is feasible by construction.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fitzpatrick::{affine_piece, contains, psi, q_eps_membership, FitzValue, MonotoneSet};
use crate::gaussian::{decompose, GaussianDecomposition};
use crate::linalg::{lp_solve_with, norm, norm_sq, sub, LpCaps, LpProblem, LpStatus};
use crate::measures::{plan_value, Cluster, DiscreteMeasure, MartingalePlan};
use crate::par::Execution;
use crate::space::SSpace;
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_clusters: usize,
    pub exact_atom_cap: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub fractional_split: bool,
    pub tolerances: Tolerances,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_clusters: 64,
            exact_atom_cap: 9,
            restarts: 64,
            max_iterations: 500,
            seed: 0,
            fractional_split: true,
            tolerances: Tolerances::default(),
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_clusters", self.max_clusters),
            ("exact_atom_cap", self.exact_atom_cap),
            ("restarts", self.restarts),
            ("max_iterations", self.max_iterations),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

fn check_nu(sp: &SSpace, nu: &DiscreteMeasure) -> Result<()> {
    if nu.dim() != sp.dim() {
        return Err(Error::DimensionMismatch {
            expected: sp.dim(),
            found: nu.dim(),
        });
    }
    Ok(())
}

/// Value of a hard partition, `(1/2) sum_k S(m_k, m_k) / p_k` with
/// `m_k = sum_{j in k} q_j y_j`.
fn partition_value(sp: &SSpace, nu: &DiscreteMeasure, labels: &[u8], blocks: usize) -> f64 {
    let d = nu.dim();
    let mut m = vec![0.0; blocks * d];
    let mut p = vec![0.0; blocks];
    for (j, &l) in labels.iter().enumerate() {
        let l = l as usize;
        let q = nu.weight(j);
        p[l] += q;
        for (a, y) in m[l * d..(l + 1) * d].iter_mut().zip(nu.atom(j)) {
            *a += q * y;
        }
    }
    0.5 * (0..blocks)
        .map(|k| sp.sq(&m[k * d..(k + 1) * d]) / p[k])
        .sum::<f64>()
}

/// All set partitions of `n` items as restricted-growth strings.
pub fn restricted_growth_strings(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut a = vec![0u8; n];
    // b[i] = 1 + max(a[0..i])
    let mut b = vec![1u8; n];
    loop {
        out.push(a.clone());
        let mut i = n - 1;
        loop {
            if i == 0 {
                return out;
            }
            if a[i] < b[i] {
                break;
            }
            i -= 1;
        }
        a[i] += 1;
        for k in i + 1..n {
            a[k] = 0;
            b[k] = b[i].max(a[i] + 1);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    /// Best plan found, fractional when refinement helped.
    pub plan: MartingalePlan,
    pub value: f64,
    pub hard_plan: MartingalePlan,
    /// Optimum over hard partitions.
    pub hard_value: f64,
    /// Best value after fractional refinement, at least `hard_value`.
    pub refined_value: f64,
    pub partitions: usize,
}

const REFINE_TOP: usize = 8;

/// Enumerates every partition of the atoms and refines the best ones over
/// fractional assignments.
pub fn solve_exact(sp: &SSpace, nu: &DiscreteMeasure, cfg: &SolverConfig) -> Result<ExactSolution> {
    cfg.validate()?;
    check_nu(sp, nu)?;
    let n = nu.len();
    if n > cfg.exact_atom_cap {
        return Err(Error::AtomCapExceeded {
            atoms: n,
            cap: cfg.exact_atom_cap,
        });
    }
    let strings: Vec<Vec<u8>> = restricted_growth_strings(n)
        .into_iter()
        .filter(|s| blocks_of(s) <= cfg.max_clusters)
        .collect();
    let values = cfg
        .execution
        .map(&strings, |s| partition_value(sp, nu, s, blocks_of(s)));
    let mut order: Vec<usize> = (0..strings.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let labels_of = |i: usize| -> Vec<usize> { strings[i].iter().map(|&l| l as usize).collect() };
    let hard_plan = MartingalePlan::from_labels(nu, &labels_of(order[0]));
    let hard_value = plan_value(sp, &hard_plan, nu)?;

    let (mut plan, mut value) = (hard_plan.clone(), hard_value);
    if cfg.fractional_split {
        let top: Vec<usize> = order.iter().copied().take(REFINE_TOP).collect();
        let refined = cfg.execution.map(&top, |&i| {
            let s = &strings[i];
            refine_fractional(sp, nu, s, blocks_of(s), cfg)
        });
        for r in refined {
            let r = r?;
            let v = plan_value(sp, &r, nu)?;
            // Rounding-level gains would only trade a hard plan for a noisy copy.
            if v > value + 1e-13 * (1.0 + value.abs()) {
                plan = r;
                value = v;
            }
        }
    }
    Ok(ExactSolution {
        plan,
        value,
        hard_plan,
        hard_value,
        refined_value: value,
        partitions: strings.len(),
    })
}

fn blocks_of(s: &[u8]) -> usize {
    s.iter().copied().max().map_or(0, |m| m as usize + 1)
}

/// Projects `v` onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Objective for fractions `a[j][k]` (row-stochastic) and its gradient
/// `q_j (S(x_k, y_j) - S(x_k, x_k) / 2)`.
fn fractional_objective(sp: &SSpace, nu: &DiscreteMeasure, a: &[Vec<f64>], k: usize, grad: Option<&mut Vec<Vec<f64>>>) -> f64 {
    let d = nu.dim();
    let mut m = vec![vec![0.0; d]; k];
    let mut p = vec![0.0; k];
    for (j, row) in a.iter().enumerate() {
        let q = nu.weight(j);
        for (c, &f) in row.iter().enumerate() {
            if f > 0.0 {
                p[c] += q * f;
                for (mi, yi) in m[c].iter_mut().zip(nu.atom(j)) {
                    *mi += q * f * yi;
                }
            }
        }
    }
    let mut value = 0.0;
    let mut x = vec![vec![0.0; d]; k];
    for c in 0..k {
        if p[c] > 0.0 {
            x[c] = m[c].iter().map(|v| v / p[c]).collect();
            value += 0.5 * sp.sq(&m[c]) / p[c];
        }
    }
    if let Some(g) = grad {
        for (j, row) in g.iter_mut().enumerate() {
            let q = nu.weight(j);
            let y = nu.atom(j);
            for (c, gc) in row.iter_mut().enumerate() {
                *gc = if p[c] > 0.0 {
                    q * affine_piece(sp, &x[c], y)
                } else {
                    // An empty cluster receiving mass sits at y_j.
                    q * 0.5 * sp.sq(y)
                };
            }
        }
    }
    value
}

/// Projected-gradient ascent over fractional assignments, started at a
/// hard partition and keeping its cluster count.
fn refine_fractional(sp: &SSpace, nu: &DiscreteMeasure, labels: &[u8], k: usize, cfg: &SolverConfig) -> Result<MartingalePlan> {
    let n = nu.len();
    let mut a: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let mut row = vec![0.0; k];
            row[l as usize] = 1.0;
            row
        })
        .collect();
    let scale = 1.0 + nu.atoms().iter().map(|y| norm_sq(y)).fold(0.0, f64::max);
    let mut step = 1.0 / (scale * sp.matrix().norm().max(1e-300));
    let mut grad = vec![vec![0.0; k]; n];
    let mut f = fractional_objective(sp, nu, &a, k, Some(&mut grad));
    let mut stalled = 0;
    for _ in 0..cfg.max_iterations {
        let mut accepted = false;
        for _ in 0..50 {
            let mut trial = a.clone();
            let mut ascent = 0.0;
            for j in 0..n {
                for c in 0..k {
                    trial[j][c] += step * grad[j][c];
                }
                project_simplex(&mut trial[j]);
                for c in 0..k {
                    ascent += grad[j][c] * (trial[j][c] - a[j][c]);
                }
            }
            if ascent <= 0.0 {
                break;
            }
            let ft = fractional_objective(sp, nu, &trial, k, None);
            if ft >= f + 1e-4 * ascent {
                a = trial;
                let before = f;
                f = fractional_objective(sp, nu, &a, k, Some(&mut grad));
                accepted = true;
                step *= 2.0;
                if f - before <= 1e-15 * (1.0 + f.abs()) {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || stalled >= 5 {
            break;
        }
    }
    // Snap numerically empty fractions to zero before building the plan.
    let masses: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..n)
                .map(|j| {
                    let row = &a[j];
                    let total: f64 = row.iter().filter(|v| **v > 1e-12).sum();
                    if row[c] > 1e-12 {
                        nu.weight(j) * row[c] / total
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(MartingalePlan::from_masses(nu, &masses, cfg.tolerances.dust).normalized(&cfg.tolerances))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub plan: MartingalePlan,
    pub value: f64,
    pub best_restart: usize,
    pub restart_values: Vec<f64>,
    /// Cluster cap in force; optimal plans with more x-atoms are excluded.
    pub cluster_cap: usize,
}

/// splitmix64 finalizer, used to derive independent per-restart seeds.
fn derive_seed(seed: u64, restart: usize) -> u64 {
    let mut z = seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Multi-start alternating search: reassign each atom to the cluster whose
/// affine piece `S(x_k, y) - S(x_k, x_k) / 2` is largest, move clusters to
/// barycenters, and keep the best plan seen.
pub fn solve_local(sp: &SSpace, nu: &DiscreteMeasure, cfg: &SolverConfig) -> Result<LocalSolution> {
    cfg.validate()?;
    check_nu(sp, nu)?;
    let runs = cfg.execution.map_range(cfg.restarts, |r| local_restart(sp, nu, cfg, r));
    let mut best: Option<(usize, MartingalePlan, f64)> = None;
    let mut restart_values = Vec::with_capacity(runs.len());
    for (r, (plan, value)) in runs.into_iter().enumerate() {
        restart_values.push(value);
        // Strictly greater: ties keep the lowest restart index.
        if best.as_ref().map_or(true, |b| value > b.2) {
            best = Some((r, plan, value));
        }
    }
    let (best_restart, plan, value) = best.expect("at least one restart");
    Ok(LocalSolution {
        plan,
        value,
        best_restart,
        restart_values,
        cluster_cap: cfg.max_clusters,
    })
}

fn initial_centers(nu: &DiscreteMeasure, cfg: &SolverConfig, restart: usize) -> Vec<Vec<f64>> {
    let n = nu.len();
    let cap = cfg.max_clusters.min(n);
    match restart {
        0 if n <= cfg.max_clusters => return nu.atoms().to_vec(),
        1 => return vec![nu.barycenter()],
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, restart));
    let k = if restart % 4 == 0 { cap } else { rng.gen_range(1..=cap) };
    if restart % 2 == 0 {
        // Seeds at randomly chosen atoms.
        sample(&mut rng, n, k).iter().map(|j| nu.atom(j).to_vec()).collect()
    } else {
        // Barycenters of a random aggregation.
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        MartingalePlan::from_labels(nu, &labels).centers()
    }
}

fn local_restart(sp: &SSpace, nu: &DiscreteMeasure, cfg: &SolverConfig, restart: usize) -> (MartingalePlan, f64) {
    let tol = &cfg.tolerances;
    let n = nu.len();
    let mut centers = initial_centers(nu, cfg, restart);
    let mut best: Option<(MartingalePlan, f64)> = None;
    let mut previous: Option<Vec<Vec<f64>>> = None;
    for _ in 0..cfg.max_iterations {
        let k = centers.len();
        let sx: Vec<Vec<f64>> = centers.iter().map(|x| sp.apply(x)).collect();
        let half: Vec<f64> = centers.iter().map(|x| 0.5 * sp.sq(x)).collect();
        let mut masses = vec![vec![0.0; n]; k];
        let mut pieces = vec![0.0; k];
        for j in 0..n {
            let y = nu.atom(j);
            let mut top = f64::NEG_INFINITY;
            for c in 0..k {
                pieces[c] = crate::linalg::dot(&sx[c], y) - half[c];
                top = top.max(pieces[c]);
            }
            let slack = tol.tie * (1.0 + norm_sq(y));
            if cfg.fractional_split {
                let tied = pieces.iter().filter(|v| **v >= top - slack).count();
                for c in 0..k {
                    if pieces[c] >= top - slack {
                        masses[c][j] = nu.weight(j) / tied as f64;
                    }
                }
            } else {
                let c = pieces.iter().position(|v| *v >= top - slack).expect("non-empty");
                masses[c][j] = nu.weight(j);
            }
        }
        // Empty clusters disappear here.
        let plan = MartingalePlan::from_masses(nu, &masses, tol.dust);
        let value = plan.objective(sp);
        if best.as_ref().map_or(true, |b| value > b.1) {
            best = Some((plan.clone(), value));
        }
        let kept: Vec<Vec<f64>> = masses.into_iter().filter(|row| row.iter().sum::<f64>() > tol.dust).collect();
        if previous.as_ref() == Some(&kept) {
            break;
        }
        previous = Some(kept);
        centers = plan.centers();
    }
    let (mut plan, mut value) = best.expect("at least one iteration");
    // The alternating phase can oscillate under indefinite S; finish with an
    // exact ascent over single-atom moves from the best state seen.
    let mut labels = hard_labels(nu, &plan);
    polish(sp, nu, &mut labels, cfg.max_clusters.min(n), cfg.max_iterations);
    let polished = MartingalePlan::from_labels(nu, &labels);
    let polished_value = polished.objective(sp);
    if polished_value > value {
        plan = polished;
        value = polished_value;
    }
    let plan = plan.normalized(tol);
    let value = plan.objective(sp).max(value.min(plan.objective(sp)));
    (plan, value)
}

/// Each atom goes to the cluster carrying most of its mass.
fn hard_labels(nu: &DiscreteMeasure, plan: &MartingalePlan) -> Vec<usize> {
    let mut best = vec![(0usize, f64::NEG_INFINITY); nu.len()];
    for (k, c) in plan.clusters().iter().enumerate() {
        for &(j, w) in &c.assignment {
            if w > best[j].1 {
                best[j] = (k, w);
            }
        }
    }
    best.into_iter().map(|(k, _)| k).collect()
}

/// First-improvement ascent: move one atom to another (possibly new) cluster
/// whenever that strictly raises `sum_k S(m_k, m_k) / (2 p_k)`, where `m_k`
/// is the first moment of cluster `k`. Labels are compacted on return.
fn polish(sp: &SSpace, nu: &DiscreteMeasure, labels: &mut [usize], cap: usize, max_sweeps: usize) {
    let n = nu.len();
    let d = nu.dim();
    let slots = cap.max(labels.iter().copied().max().map_or(0, |m| m + 1));
    let sy: Vec<Vec<f64>> = nu.atoms().iter().map(|y| sp.apply(y)).collect();
    let yy: Vec<f64> = (0..n).map(|j| crate::linalg::dot(&sy[j], nu.atom(j))).collect();
    let mut count = vec![0usize; slots];
    let mut p = vec![0.0; slots];
    let mut m = vec![vec![0.0; d]; slots];
    let mut sm = vec![vec![0.0; d]; slots];
    let mut msm = vec![0.0; slots];
    let rebuild = |labels: &[usize], count: &mut Vec<usize>, p: &mut Vec<f64>, m: &mut Vec<Vec<f64>>, sm: &mut Vec<Vec<f64>>, msm: &mut Vec<f64>| {
        count.iter_mut().for_each(|c| *c = 0);
        p.iter_mut().for_each(|v| *v = 0.0);
        m.iter_mut().for_each(|v| v.iter_mut().for_each(|a| *a = 0.0));
        for j in 0..n {
            let (k, q) = (labels[j], nu.weight(j));
            count[k] += 1;
            p[k] += q;
            for (a, b) in m[k].iter_mut().zip(nu.atom(j)) {
                *a += q * b;
            }
        }
        for k in 0..slots {
            sm[k] = sp.apply(&m[k]);
            msm[k] = crate::linalg::dot(&m[k], &sm[k]);
        }
    };
    let value = |mass: f64, quad: f64| if mass > 0.0 { 0.5 * quad / mass } else { 0.0 };
    for _ in 0..max_sweeps {
        rebuild(labels, &mut count, &mut p, &mut m, &mut sm, &mut msm);
        let total: f64 = (0..slots).map(|k| value(p[k], msm[k])).sum();
        let threshold = 1e-12 * (1.0 + total.abs());
        let mut moved = false;
        for j in 0..n {
            let (a, q) = (labels[j], nu.weight(j));
            let y = nu.atom(j);
            let (p_a, msm_a) = if count[a] == 1 {
                (0.0, 0.0)
            } else {
                (p[a] - q, msm[a] - 2.0 * q * crate::linalg::dot(y, &sm[a]) + q * q * yy[j])
            };
            let loss = value(p_a, msm_a) - value(p[a], msm[a]);
            let mut target: Option<(usize, f64)> = None;
            let mut empty_seen = false;
            for b in 0..slots {
                if b == a {
                    continue;
                }
                if count[b] == 0 {
                    // All empty slots are equivalent; try one.
                    if empty_seen || count[a] == 1 {
                        continue;
                    }
                    empty_seen = true;
                }
                let msm_b = msm[b] + 2.0 * q * crate::linalg::dot(y, &sm[b]) + q * q * yy[j];
                let delta = loss + value(p[b] + q, msm_b) - value(p[b], msm[b]);
                if delta > threshold && target.map_or(true, |t| delta > t.1) {
                    target = Some((b, delta));
                }
            }
            if let Some((b, _)) = target {
                let dot_a = crate::linalg::dot(y, &sm[a]);
                let dot_b = crate::linalg::dot(y, &sm[b]);
                msm[a] = if count[a] == 1 { 0.0 } else { msm[a] - 2.0 * q * dot_a + q * q * yy[j] };
                msm[b] += 2.0 * q * dot_b + q * q * yy[j];
                count[a] -= 1;
                count[b] += 1;
                p[a] = if count[a] == 0 { 0.0 } else { p[a] - q };
                p[b] += q;
                for i in 0..d {
                    m[a][i] -= q * y[i];
                    m[b][i] += q * y[i];
                    sm[a][i] -= q * sy[j][i];
                    sm[b][i] += q * sy[j][i];
                }
                labels[j] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let mut remap = vec![usize::MAX; slots];
    let mut next = 0;
    for l in labels.iter_mut() {
        if remap[*l] == usize::MAX {
            remap[*l] = next;
            next += 1;
        }
        *l = remap[*l];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    GapOpen,
    Violated,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::GapOpen => "gap_open",
            Verdict::Violated => "violated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakDuality {
    Holds,
    Violated,
    /// `psi` is only a lower bound, or the dual is infinite.
    Inconclusive,
}

/// Item (b) at one support pair: `psi_G(y) = S(x, y) - S(x, x) / 2` and `x in G`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportCheck {
    pub cluster: usize,
    pub atom: usize,
    pub mass: f64,
    /// `psi_G(y) - (S(x, y) - S(x, x) / 2)`; `None` when `psi` is infinite.
    pub residual: Option<f64>,
    pub tolerance: f64,
    pub member: bool,
    pub passed: bool,
}

/// Item (c) for one cluster: every assigned atom lies in `Q_G^eps(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCheck {
    pub cluster: usize,
    pub eps: f64,
    pub passed: bool,
    pub failing_atoms: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub plan: MartingalePlan,
    pub set: MonotoneSet,
    pub primal_value: f64,
    pub dual_value: FitzValue,
    /// `dual - primal`, absent when the dual is infinite.
    pub gap: Option<f64>,
    pub weak_duality: WeakDuality,
    pub support_check: Vec<SupportCheck>,
    pub forward_check: Vec<ForwardCheck>,
    pub eps: f64,
    pub set_maximal: bool,
    pub psi_exact: bool,
    pub verdict: Verdict,
}

impl Certificate {
    pub fn support_passed(&self) -> bool {
        self.support_check.iter().all(|c| c.passed)
    }

    pub fn forward_passed(&self) -> bool {
        self.forward_check.iter().all(|c| c.passed)
    }
}

pub const DEFAULT_EPS: f64 = 1e-3;

/// Checks the optimality conditions for a plan and a candidate set.
pub fn certify(
    sp: &SSpace,
    plan: &MartingalePlan,
    set: &MonotoneSet,
    nu: &DiscreteMeasure,
    eps: f64,
    tol: &Tolerances,
) -> Result<Certificate> {
    check_nu(sp, nu)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig("eps must be positive".into()));
    }
    plan.validate(nu, tol)?;
    let primal_value = plan_value(sp, plan, nu)?;
    let psis: Vec<FitzValue> = nu
        .atoms()
        .iter()
        .map(|y| psi(sp, set, y, tol).map(|e| e.value))
        .collect::<Result<_>>()?;
    let dual_value = psis
        .iter()
        .zip(nu.weights())
        .try_fold(0.0, |acc, (v, q)| v.finite().map(|v| acc + q * v))
        .map_or(FitzValue::PlusInfinity, FitzValue::Finite);
    let psi_exact = set.psi_is_exact();
    let set_maximal = set.is_known_maximal(sp);

    let mut support_check = Vec::new();
    for (k, c) in plan.clusters().iter().enumerate() {
        let member = contains(sp, set, &c.x, tol.proj);
        for &(j, w) in &c.assignment {
            let y = nu.atom(j);
            let tolerance = tol.support * (1.0 + norm_sq(y));
            let residual = psis[j].finite().map(|v| v - affine_piece(sp, &c.x, y));
            let ok = match residual {
                // A grid lower bound can only undershoot the true value.
                Some(r) if psi_exact => r.abs() <= tolerance,
                Some(r) => r <= tolerance,
                None => false,
            };
            support_check.push(SupportCheck {
                cluster: k,
                atom: j,
                mass: w,
                residual,
                tolerance,
                member,
                passed: ok && member,
            });
        }
    }
    let forward_check = plan
        .clusters()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let failing_atoms: Vec<usize> = c
                .assignment
                .iter()
                .filter(|(j, _)| !q_eps_membership(sp, set, &c.x, nu.atom(*j), eps, tol))
                .map(|(j, _)| *j)
                .collect();
            ForwardCheck {
                cluster: k,
                eps,
                passed: failing_atoms.is_empty(),
                failing_atoms,
            }
        })
        .collect();

    let gap = dual_value.finite().map(|d| d - primal_value);
    let weak_duality = match (gap, dual_value.finite()) {
        (Some(g), Some(d)) if psi_exact => {
            if g >= -tol.weak * (1.0 + d.abs()) {
                WeakDuality::Holds
            } else {
                WeakDuality::Violated
            }
        }
        _ => WeakDuality::Inconclusive,
    };
    let support_ok = support_check.iter().all(|c| c.passed);
    let closed = match (gap, dual_value.finite()) {
        (Some(g), Some(d)) => g <= tol.gap * (1.0 + d.abs()),
        _ => false,
    };
    let verdict = if !support_ok || weak_duality == WeakDuality::Violated {
        Verdict::Violated
    } else if closed && set_maximal && psi_exact {
        Verdict::Certified
    } else {
        Verdict::GapOpen
    };
    Ok(Certificate {
        plan: plan.clone(),
        set: set.clone(),
        primal_value,
        dual_value,
        gap,
        weak_duality,
        support_check,
        forward_check,
        eps,
        set_maximal,
        psi_exact,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderReport {
    pub trials: usize,
    /// Smallest `int (S(x,y) - S(x,x)/2) d eta - S(eta(y), eta(y)) / 2` seen.
    pub min_margin: f64,
    /// Margins below `-threshold` count as violations.
    pub threshold: f64,
    /// `eta` attaining the minimum when it is a violation, as
    /// `((cluster, atom), weight)`.
    pub witness: Option<Vec<((usize, usize), f64)>>,
}

impl FirstOrderReport {
    pub fn violated(&self) -> bool {
        self.witness.is_some()
    }
}

/// Samples probability measures `eta` on the support of the plan and
/// evaluates the first-order margin, which is nonnegative at an optimum.
pub fn first_order_check(
    sp: &SSpace,
    plan: &MartingalePlan,
    nu: &DiscreteMeasure,
    trials: usize,
    seed: u64,
) -> FirstOrderReport {
    let pairs: Vec<(usize, usize)> = plan.support().map(|(k, j, _)| (k, j)).collect();
    let scale = 1.0 + nu.atoms().iter().map(|y| norm_sq(y)).fold(0.0, f64::max);
    let threshold = 1e-8 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_margin = f64::INFINITY;
    let mut worst: Vec<((usize, usize), f64)> = Vec::new();
    let d = nu.dim();
    let clusters = plan.clusters();
    for t in 0..trials {
        if pairs.is_empty() {
            break;
        }
        // Singletons first, then random mixtures of up to four pairs.
        let chosen: Vec<usize> = if t < pairs.len() {
            vec![t]
        } else {
            let size = rng.gen_range(1..=pairs.len().min(4));
            sample(&mut rng, pairs.len(), size).into_vec()
        };
        let raw: Vec<f64> = chosen.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut lhs = 0.0;
        let mut bary = vec![0.0; d];
        let mut eta = Vec::with_capacity(chosen.len());
        for (&i, w) in chosen.iter().zip(&raw) {
            let w = w / total;
            let (k, j) = pairs[i];
            let y = nu.atom(j);
            lhs += w * affine_piece(sp, &clusters[k].x, y);
            for (b, yi) in bary.iter_mut().zip(y) {
                *b += w * yi;
            }
            eta.push(((k, j), w));
        }
        let margin = lhs - 0.5 * sp.sq(&bary);
        if margin < min_margin {
            min_margin = margin;
            worst = eta;
        }
    }
    FirstOrderReport {
        trials,
        min_margin,
        threshold,
        witness: (min_margin < -threshold).then_some(worst),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtCheck {
    /// `sum w_jk S(x_k, y_j)` for the plan.
    pub plan_value: f64,
    /// Optimum of the same objective over all couplings of the marginals.
    pub lp_value: f64,
    pub passed: bool,
}

/// Compares the plan with the unconstrained optimal coupling of its own
/// marginals; an optimal martingale plan is also an optimal coupling.
pub fn ot_cross_check(sp: &SSpace, plan: &MartingalePlan, nu: &DiscreteMeasure, tol: &Tolerances) -> Result<OtCheck> {
    check_nu(sp, nu)?;
    let (k, n) = (plan.len(), nu.len());
    let caps = LpCaps::default();
    if k * n > caps.max_cols {
        return Err(Error::DimensionCap {
            what: "transport LP columns",
            size: k * n,
            cap: caps.max_cols,
        });
    }
    let q = plan.y_marginal(n);
    let clusters = plan.clusters();
    let mut cost = Vec::with_capacity(k * n);
    for c in clusters {
        for j in 0..n {
            cost.push(-sp.form(&c.x, nu.atom(j)));
        }
    }
    let mut lp = LpProblem::new(cost);
    for (a, c) in clusters.iter().enumerate() {
        let mut row = vec![0.0; k * n];
        row[a * n..(a + 1) * n].iter_mut().for_each(|v| *v = 1.0);
        lp.add_row(row, c.p);
    }
    // The last column sum is implied by the others.
    for (j, qj) in q.iter().enumerate().take(n.saturating_sub(1)) {
        let mut row = vec![0.0; k * n];
        for a in 0..k {
            row[a * n + j] = 1.0;
        }
        lp.add_row(row, *qj);
    }
    let out = lp_solve_with(&lp, tol.lp, caps)?;
    if out.status != LpStatus::Optimal {
        return Err(Error::InvalidPlan("plan marginals admit no coupling".into()));
    }
    let plan_value = 2.0 * plan.cross_objective(sp, nu);
    let lp_value = -out.value;
    Ok(OtCheck {
        plan_value,
        lp_value,
        passed: (lp_value - plan_value).abs() <= 1e-8 * (1.0 + lp_value.abs()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineCandidate {
    pub set: MonotoneSet,
    pub decomposition: GaussianDecomposition,
    pub dual_value: f64,
    /// Largest `|E[Y | X = x] - x|` over the fibers of the linear map.
    pub martingale_residual: f64,
    /// Fibers of the linear map as a plan, each at its conditional mean.
    pub plan: MartingalePlan,
}

/// Affine dual candidate from the Gaussian solution with the moments of `nu`.
pub fn dual_affine_candidate(sp: &SSpace, nu: &DiscreteMeasure, tol: &Tolerances) -> Result<AffineCandidate> {
    check_nu(sp, nu)?;
    let dec = decompose(sp, &nu.covariance(), &nu.barycenter(), tol)?;
    let set = dec.optimal_set(sp, tol)?;
    let mut dual_value = 0.0;
    for (y, q) in nu.atoms().iter().zip(nu.weights()) {
        let v = psi(sp, &set, y, tol)?
            .value
            .finite()
            .ok_or(Error::UnboundedBelow)?;
        dual_value += q * v;
    }
    let images: Vec<Vec<f64>> = nu.atoms().iter().map(|y| dec.plan_map(y)).collect::<Result<_>>()?;
    let fibers = group_points(&images, 1e-9);
    let mut residual = 0.0f64;
    let mut clusters = Vec::with_capacity(fibers.len());
    for fiber in &fibers {
        let p: f64 = fiber.iter().map(|&j| nu.weight(j)).sum();
        let mut mean = vec![0.0; nu.dim()];
        for &j in fiber {
            for (m, y) in mean.iter_mut().zip(nu.atom(j)) {
                *m += nu.weight(j) * y / p;
            }
        }
        residual = residual.max(norm(&sub(&mean, &images[fiber[0]])));
        clusters.push(Cluster {
            x: mean,
            p,
            assignment: fiber.iter().map(|&j| (j, nu.weight(j))).collect(),
        });
    }
    Ok(AffineCandidate {
        set,
        decomposition: dec,
        dual_value,
        martingale_residual: residual,
        plan: MartingalePlan::from_clusters(clusters),
    })
}

/// Groups points closer than `rel * (1 + |x|)` to a group's first member.
fn group_points(points: &[Vec<f64>], rel: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    // Groups whose representative is still within reach along axis 0.
    let mut open: Vec<usize> = Vec::new();
    for &i in &order {
        let x = &points[i];
        let reach = rel * (1.0 + norm(x));
        open.retain(|&g| x[0] - points[groups[g][0]][0] <= 2.0 * reach);
        match open
            .iter()
            .find(|&&g| norm(&sub(&points[groups[g][0]], x)) <= reach)
        {
            Some(&g) => groups[g].push(i),
            None => {
                groups.push(vec![i]);
                open.push(groups.len() - 1);
            }
        }
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Two-point plan through `x in G`: `u` with `x in P_G(u)` and its
/// reflection `v = x + t / (1 - t) (x - u)`, weighted `t` and `1 - t` so
/// that `x` is their barycenter.
pub fn reflected_pair(x: &[f64], u: &[f64], t: f64) -> Result<(DiscreteMeasure, MartingalePlan)> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidConfig("t must lie in (0, 1)".into()));
    }
    if x.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: u.len(),
        });
    }
    let s = t / (1.0 - t);
    let v: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + s * (a - b)).collect();
    let nu = DiscreteMeasure::new(vec![u.to_vec(), v], vec![t, 1.0 - t])?;
    let plan = MartingalePlan::from_masses(&nu, &[nu.weights().to_vec()], 0.0);
    Ok((nu, plan))
}

/// Largest `|psi_1(y) - psi_2(y)|` over the atoms of `nu`. Two optimal
/// sets must agree there; the value is reported, not enforced.
pub fn uniqueness_diagnostic(sp: &SSpace, g1: &MonotoneSet, g2: &MonotoneSet, nu: &DiscreteMeasure, tol: &Tolerances) -> Result<Option<f64>> {
    let mut worst = 0.0f64;
    for y in nu.atoms() {
        let a = psi(sp, g1, y, tol)?.value.finite();
        let b = psi(sp, g2, y, tol)?.value.finite();
        match (a, b) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            _ => return Ok(None),
        }
    }
    Ok(Some(worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use proptest::prelude::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn line(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    fn one_d(s: f64) -> SSpace {
        SSpace::new(Matrix::from_diag(&[s])).unwrap()
    }

    fn swap2() -> SSpace {
        SSpace::new(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap()
    }

    fn minkowski() -> SSpace {
        SSpace::new(Matrix::from_diag(&[1.0, -1.0])).unwrap()
    }

    #[test]
    fn bell_numbers() {
        let bell = [1usize, 1, 2, 5, 15, 52, 203, 877, 4140, 21147];
        for (n, b) in bell.iter().enumerate().skip(1) {
            assert_eq!(restricted_growth_strings(n).len(), *b);
        }
    }

    #[test]
    fn exact_examples() {
        let cfg = SolverConfig::default();
        let nu = DiscreteMeasure::new(line(&[-1.0, 0.5, 2.0]), vec![0.2, 0.5, 0.3]).unwrap();
        let sol = solve_exact(&one_d(1.0), &nu, &cfg).unwrap();
        assert_eq!(sol.plan.len(), 3);
        let expected = 0.5 * (0.2 * 1.0 + 0.5 * 0.25 + 0.3 * 4.0);
        assert!((sol.value - expected).abs() < 1e-12);

        let nu = DiscreteMeasure::uniform(line(&[0.0, 2.0])).unwrap();
        let sol = solve_exact(&one_d(-1.0), &nu, &cfg).unwrap();
        assert_eq!(sol.plan.len(), 1);
        assert_eq!(sol.plan.clusters()[0].x, vec![1.0]);
        assert!((sol.value + 0.5).abs() < 1e-12);

        let nu = DiscreteMeasure::uniform(vec![vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        let sol = solve_exact(&swap2(), &nu, &cfg).unwrap();
        assert_eq!(sol.plan.len(), 2);
        assert!((sol.value - 1.0).abs() < 1e-12);

        let big = DiscreteMeasure::uniform(line(&(0..10).map(f64::from).collect::<Vec<_>>())).unwrap();
        assert!(matches!(
            solve_exact(&one_d(1.0), &big, &cfg),
            Err(Error::AtomCapExceeded { atoms: 10, cap: 9 })
        ));
    }

    #[test]
    fn local_examples() {
        let cfg = SolverConfig::default();
        let dirac = DiscreteMeasure::dirac(vec![1.0, 2.0]).unwrap();
        let sol = solve_local(&swap2(), &dirac, &cfg).unwrap();
        assert_eq!(sol.plan.len(), 1);
        assert!((sol.value - 2.0).abs() < 1e-12);

        let nu = DiscreteMeasure::uniform(line(&[0.0, 2.0])).unwrap();
        assert!((solve_local(&one_d(-1.0), &nu, &cfg).unwrap().value + 0.5).abs() < 1e-12);

        let nu = DiscreteMeasure::uniform(vec![vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        assert!(solve_local(&swap2(), &nu, &cfg).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn local_search_is_deterministic_across_modes() {
        let nu = DiscreteMeasure::uniform(vec![
            vec![0.3, 1.0],
            vec![-1.2, 0.4],
            vec![2.0, -0.7],
            vec![0.1, 0.1],
            vec![-0.5, -1.5],
        ])
        .unwrap();
        let mut cfg = SolverConfig {
            seed: 7,
            ..SolverConfig::default()
        };
        let a = solve_local(&minkowski(), &nu, &cfg).unwrap();
        cfg.execution = Execution::Sequential;
        let b = solve_local(&minkowski(), &nu, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn certify_examples() {
        let mk = minkowski();
        let nu = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let g = MonotoneSet::affine(&mk, vec![0.0, 0.0], Matrix::from_diag(&[1.0, 0.0]), &tol()).unwrap();
        let cert = certify(&mk, &MartingalePlan::identity(&nu), &g, &nu, DEFAULT_EPS, &tol()).unwrap();
        assert_eq!(cert.verdict, Verdict::Certified);
        assert!(cert.gap.unwrap().abs() <= 1e-8);
        assert!((cert.primal_value - 0.5).abs() < 1e-12);
        assert!(cert.forward_passed());

        let id = SSpace::new(Matrix::identity(2)).unwrap();
        let whole = MonotoneSet::affine(&id, vec![0.0; 2], Matrix::identity(2), &tol()).unwrap();
        let cert = certify(&id, &MartingalePlan::barycentric(&nu), &whole, &nu, DEFAULT_EPS, &tol()).unwrap();
        assert_ne!(cert.verdict, Verdict::Certified);
        assert!(cert.gap.unwrap() > 0.0);
        assert_eq!(cert.weak_duality, WeakDuality::Holds);

        let short = MartingalePlan::from_clusters(vec![Cluster {
            x: vec![1.0, 0.0],
            p: 0.5,
            assignment: vec![(0, 0.5)],
        }]);
        assert!(matches!(
            certify(&mk, &short, &g, &nu, DEFAULT_EPS, &tol()),
            Err(Error::MarginalMismatch { .. })
        ));
    }

    #[test]
    fn first_order_examples() {
        let id = one_d(1.0);
        let nu = DiscreteMeasure::uniform(line(&[-1.0, 0.0, 2.0])).unwrap();
        let opt = MartingalePlan::identity(&nu);
        let rep = first_order_check(&id, &opt, &nu, 1000, 3);
        assert!(!rep.violated());
        assert!(rep.min_margin >= -1e-12);
        let merged = MartingalePlan::barycentric(&nu);
        let rep = first_order_check(&id, &merged, &nu, 1000, 3);
        assert!(rep.violated());
    }

    #[test]
    fn ot_examples() {
        let mk = minkowski();
        let nu = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!(ot_cross_check(&mk, &MartingalePlan::barycentric(&nu), &nu, &tol()).unwrap().passed);

        let id = one_d(1.0);
        let nu = DiscreteMeasure::uniform(line(&[-2.0, -1.0, 1.0, 2.0])).unwrap();
        let good = MartingalePlan::from_labels(&nu, &[0, 0, 1, 1]);
        assert!(ot_cross_check(&id, &good, &nu, &tol()).unwrap().passed);
        // Same marginals, pairing scrambled.
        let scrambled = MartingalePlan::from_clusters(vec![
            Cluster {
                x: vec![-1.5],
                p: 0.5,
                assignment: vec![(0, 0.25), (2, 0.25)],
            },
            Cluster {
                x: vec![1.5],
                p: 0.5,
                assignment: vec![(1, 0.25), (3, 0.25)],
            },
        ]);
        let check = ot_cross_check(&id, &scrambled, &nu, &tol()).unwrap();
        assert!(!check.passed);
        assert!((check.plan_value - 0.75).abs() < 1e-12);
        assert!((check.lp_value - 2.25).abs() < 1e-9);
    }

    #[test]
    fn affine_candidate_examples() {
        let mk = minkowski();
        let nu = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let cand = dual_affine_candidate(&mk, &nu, &tol()).unwrap();
        assert!(cand.martingale_residual < 1e-12);
        assert!((cand.dual_value - 0.25).abs() < 1e-12);
        let dirac = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            dual_affine_candidate(&mk, &dirac, &tol()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn reflected_pair_is_certified_on_its_support() {
        let mk = minkowski();
        let g = MonotoneSet::affine(&mk, vec![0.0, 0.0], Matrix::from_diag(&[1.0, 0.0]), &tol()).unwrap();
        let (nu, plan) = reflected_pair(&[1.5, 0.0], &[1.5, 2.0], 0.3).unwrap();
        plan.validate(&nu, &tol()).unwrap();
        let cert = certify(&mk, &plan, &g, &nu, DEFAULT_EPS, &tol()).unwrap();
        assert!(cert.support_passed());
    }

    fn random_instance(d: usize, m: usize, n: usize, raw: &[f64]) -> Option<(SSpace, DiscreteMeasure)> {
        let mut b = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                b[(i, j)] += 0.3 * raw[i * d + j];
            }
        }
        let diag: Vec<f64> = (0..d).map(|i| if i < m { 1.0 } else { -1.0 }).collect();
        let sp = SSpace::new(b.transpose().matmul(&Matrix::from_diag(&diag)).matmul(&b)).ok()?;
        let atoms: Vec<Vec<f64>> = (0..n).map(|j| raw[10 + j * d..10 + (j + 1) * d].to_vec()).collect();
        let w: Vec<f64> = (0..n).map(|j| 0.2 + raw[40 + j].abs()).collect();
        let t: f64 = w.iter().sum();
        let nu = DiscreteMeasure::new(atoms, w.iter().map(|v| v / t).collect()).ok()?;
        Some((sp, nu))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn solvers_emit_feasible_plans_and_respect_weak_duality(
            d in 1usize..=3, m_frac in 0.0f64..=1.0, n in 1usize..=6,
            raw in prop::collection::vec(-2.0f64..2.0, 50),
        ) {
            let m = ((d as f64) * m_frac).round() as usize;
            let Some((sp, nu)) = random_instance(d, m, n, &raw) else { return Ok(()); };
            let cfg = SolverConfig { restarts: 16, ..SolverConfig::default() };
            let exact = solve_exact(&sp, &nu, &cfg).unwrap();
            let local = solve_local(&sp, &nu, &cfg).unwrap();
            for plan in [&exact.plan, &exact.hard_plan, &local.plan] {
                plan.validate(&nu, &tol()).unwrap();
            }
            prop_assert!(exact.refined_value >= exact.hard_value - 1e-12);
            prop_assert!(local.value <= exact.refined_value + 1e-8);
            // The optimal plan's own centers dominate every plan.
            let own = MonotoneSet::Finite(exact.plan.centers());
            let dual: f64 = nu.atoms().iter().zip(nu.weights())
                .map(|(y, q)| q * psi(&sp, &own, y, &tol()).unwrap().value.finite().unwrap()).sum();
            prop_assert!(dual - exact.value >= -1e-8 * (1.0 + dual.abs()));
            prop_assert!(dual - local.value >= -1e-8 * (1.0 + dual.abs()));
        }

        #[test]
        fn definite_limits(n in 2usize..=6, raw in prop::collection::vec(-2.0f64..2.0, 50), positive in any::<bool>()) {
            let Some((_, nu)) = random_instance(2, 0, n, &raw) else { return Ok(()); };
            let sp = if positive {
                SSpace::new(Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap()).unwrap()
            } else {
                SSpace::new(Matrix::from_rows(&[[-2.0, 0.5], [0.5, -1.0]]).unwrap()).unwrap()
            };
            let cfg = SolverConfig { restarts: 8, ..SolverConfig::default() };
            let local = solve_local(&sp, &nu, &cfg).unwrap();
            let exact = solve_exact(&sp, &nu, &cfg).unwrap();
            let expected = if positive { nu.len() } else { 1 };
            prop_assert_eq!(local.plan.len(), expected);
            prop_assert_eq!(exact.plan.len(), expected);
        }
    }
}
