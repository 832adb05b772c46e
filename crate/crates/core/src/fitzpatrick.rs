//! S-monotone sets and their Fitzpatrick functions.
//!
//! `psi_G(y) = sup_{x in G} S(x, y) - S(x, x) / 2` is the dual potential of
//! the transport problem and `phi_G = S(y, y) - 2 psi_G` is the smallest
//! scalar square from `y` to `G`. Three representations are supported:
//! finite point sets (exact), affine subspaces (closed form) and graphs of
//! scalar 1-Lipschitz functions in canonical coordinates (grid search,
//! reported as a lower bound).

use crate::checks::Check;
use crate::error::{Error, Result};
use crate::linalg::{
    axpy, dot, lp_solve_with, norm, norm_sq, sub, sym_eig, EigenResult, LpCaps, LpProblem, LpStatus, Matrix,
};
use crate::par::Execution;
use crate::space::{CanonicalFrame, SSpace};
use crate::tolerance::Tolerances;

/// Value of `psi`, with `+inf` kept out of floating-point arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitzValue {
    Finite(f64),
    PlusInfinity,
}

impl FitzValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            FitzValue::Finite(v) => Some(v),
            FitzValue::PlusInfinity => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, FitzValue::Finite(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitzEval {
    pub value: FitzValue,
    /// Points of `G` attaining the supremum within the projection tolerance.
    pub maximizers: Vec<Vec<f64>>,
    /// Set when the value comes from a finite search and may undershoot.
    pub lower_bound: bool,
}

/// `x0 + range(P)` for an idempotent `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    pub x0: Vec<f64>,
    pub p: Matrix,
    /// All of `P^2 = P`, `SP` symmetric, `SP >= 0`, `S(I-P) <= 0`,
    /// `S(2P-I) > 0` hold. Such a set is maximal and projections are
    /// unique.
    pub strict: bool,
    /// Orthonormal basis of `range(P)`.
    basis: Vec<Vec<f64>>,
    /// Eigendecomposition of `B^T S B`, absent for the zero subspace.
    reduced: Option<EigenResult>,
}

/// Grid layout for [`LipschitzGraph`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub nodes_per_axis: usize,
    /// Fraction of the data extent added on each side of the box.
    pub inflation: f64,
    /// Smallest extent used for an axis when the data are degenerate.
    pub extent_floor: f64,
    pub max_nodes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nodes_per_axis: 201,
            inflation: 0.5,
            extent_floor: 1.0,
            max_nodes: 4_000_000,
        }
    }
}

/// Graph `{(u, f(u))}` of a 1-Lipschitz `f: R^m -> R` in canonical
/// coordinates, with `f` the McShane extension of finitely many anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzGraph {
    pub frame: CanonicalFrame,
    /// Sorted node coordinates per axis; anchors lie on nodes.
    pub axes: Vec<Vec<f64>>,
    /// `f` at the nodes, last axis fastest.
    pub values: Vec<f64>,
    /// Canonical anchors `(u_i, f_i)`.
    pub anchors: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonotoneSet {
    Finite(Vec<Vec<f64>>),
    Affine(AffineSubspace),
    Graph(LipschitzGraph),
}

impl MonotoneSet {
    /// Finite set; rejects pairs with negative scalar square.
    pub fn finite(sp: &SSpace, points: Vec<Vec<f64>>, tol: &Tolerances) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSet("finite set has no points".into()));
        }
        for p in &points {
            check_dim(sp, p)?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSet("non-finite coordinate".into()));
            }
        }
        if let Some((i, j, value)) = monotonicity_violation(sp, &points, tol.monotone) {
            return Err(Error::NotMonotone { i, j, value });
        }
        Ok(MonotoneSet::Finite(points))
    }

    /// Affine subspace satisfying the strict conditions listed on
    /// [`AffineSubspace::strict`].
    pub fn affine(sp: &SSpace, x0: Vec<f64>, p: Matrix, tol: &Tolerances) -> Result<Self> {
        let g = AffineSubspace::build(sp, x0, p, tol)?;
        if let Some(c) = affine_checks(sp, &g.p, tol).into_iter().find(|c| !c.passed) {
            return Err(Error::InvalidSet(format!(
                "affine set fails {} ({:.3e} vs {:.3e})",
                c.name, c.value, c.tolerance
            )));
        }
        Ok(MonotoneSet::Affine(AffineSubspace { strict: true, ..g }))
    }

    /// Any S-monotone affine subspace. `psi` may be `+inf` off a hyperplane
    /// when `S` degenerates on the subspace.
    pub fn affine_relaxed(sp: &SSpace, x0: Vec<f64>, p: Matrix, tol: &Tolerances) -> Result<Self> {
        let g = AffineSubspace::build(sp, x0, p, tol)?;
        if let Some(e) = &g.reduced {
            let min = *e.eigenvalues.last().expect("non-empty");
            if min < -tol.psd * (1.0 + sp.matrix().norm()) {
                return Err(Error::InvalidSet(format!(
                    "S restricted to the subspace has eigenvalue {min:.3e} < 0"
                )));
            }
        }
        let strict = affine_checks(sp, &g.p, tol).iter().all(|c| c.passed);
        Ok(MonotoneSet::Affine(AffineSubspace { strict, ..g }))
    }

    pub fn dim(&self) -> usize {
        match self {
            MonotoneSet::Finite(p) => p[0].len(),
            MonotoneSet::Affine(a) => a.x0.len(),
            MonotoneSet::Graph(g) => g.frame.signs.len(),
        }
    }

    /// The representation is a maximal S-monotone set.
    pub fn is_known_maximal(&self, sp: &SSpace) -> bool {
        match self {
            // With S negative definite every monotone set is a single point.
            MonotoneSet::Finite(p) => sp.index() == 0 && p.len() == 1,
            MonotoneSet::Affine(a) => a.strict,
            // Only the grid nodes are checked, never the whole graph.
            MonotoneSet::Graph(_) => false,
        }
    }

    /// `psi` is evaluated exactly rather than bounded from below.
    pub fn psi_is_exact(&self) -> bool {
        !matches!(self, MonotoneSet::Graph(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MonotoneSet::Finite(_) => "finite",
            MonotoneSet::Affine(_) => "affine",
            MonotoneSet::Graph(_) => "lipschitz_graph",
        }
    }
}

impl AffineSubspace {
    fn build(sp: &SSpace, x0: Vec<f64>, p: Matrix, tol: &Tolerances) -> Result<Self> {
        let d = sp.dim();
        check_dim(sp, &x0)?;
        if p.rows() != d || p.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.rows(),
            });
        }
        if !p.is_finite() || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSet("non-finite affine data".into()));
        }
        let idem = p.matmul(&p).sub(&p).max_abs();
        if idem > tol.psd * (1.0 + p.max_abs()) {
            return Err(Error::InvalidSet(format!("P is not idempotent (|P^2 - P| = {idem:.3e})")));
        }
        // Orthonormal basis of range(P) from the eigenvectors of P P^T.
        let ppt = p.matmul(&p.transpose()).symmetrized();
        let e = sym_eig(&ppt)?;
        let top = e.eigenvalues[0].max(0.0);
        let basis: Vec<Vec<f64>> = (0..d)
            .filter(|&k| top > 0.0 && e.eigenvalues[k] > tol.rank * top)
            .map(|k| e.vector(k))
            .collect();
        let reduced = if basis.is_empty() {
            None
        } else {
            let k = basis.len();
            let sb: Vec<Vec<f64>> = basis.iter().map(|b| sp.apply(b)).collect();
            let mut m = Matrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    m[(i, j)] = dot(&basis[i], &sb[j]);
                }
            }
            Some(sym_eig(&m.symmetrized())?)
        };
        Ok(Self {
            x0,
            p,
            strict: false,
            basis,
            reduced,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// `x0 + P (y - x0)`.
    pub fn linear_projection(&self, y: &[f64]) -> Vec<f64> {
        let z = sub(y, &self.x0);
        let pz = self.p.matvec(&z);
        self.x0.iter().zip(&pz).map(|(a, b)| a + b).collect()
    }

    /// Maximizer of the affine piece over the subspace, or `None` when the
    /// supremum is infinite.
    fn maximizer(&self, sp: &SSpace, y: &[f64], tol: &Tolerances) -> Option<Vec<f64>> {
        if self.strict {
            return Some(self.linear_projection(y));
        }
        let Some(e) = &self.reduced else {
            return Some(self.x0.clone());
        };
        let z = sub(y, &self.x0);
        let sz = sp.apply(&z);
        let g: Vec<f64> = self.basis.iter().map(|b| dot(b, &sz)).collect();
        let s_norm = sp.matrix().norm();
        let cut = tol.psd * (1.0 + s_norm);
        let mut c = vec![0.0; g.len()];
        for (k, &lam) in e.eigenvalues.iter().enumerate() {
            let ek = e.vector(k);
            let gk = dot(&ek, &g);
            if lam.abs() <= cut {
                // Null direction u = B e_k: S(u, u) = 0 and S(u, y - x0) != 0
                // make the piece unbounded along the line.
                if gk.abs() > tol.proj * (1.0 + norm(&z)) * (1.0 + s_norm) {
                    return None;
                }
            } else {
                c = axpy(&c, gk / lam, &ek);
            }
        }
        let mut x = self.x0.clone();
        for (ck, b) in c.iter().zip(&self.basis) {
            x = axpy(&x, *ck, b);
        }
        Some(x)
    }
}

/// Eq.-style suite for an affine candidate `P`: idempotence, symmetry and
/// definiteness of `SP`, `S(I-P)` and `S(2P-I)`.
pub fn affine_checks(sp: &SSpace, p: &Matrix, tol: &Tolerances) -> Vec<Check> {
    let d = sp.dim();
    let s = sp.matrix();
    let scale = 1.0 + s.norm() * (1.0 + p.norm());
    let eye = Matrix::identity(d);
    let sp_m = s.matmul(p);
    let s_imp = s.matmul(&eye.sub(p));
    let s_2pi = s.matmul(&p.scale(2.0).sub(&eye));
    let min_eig = |m: &Matrix| crate::linalg::min_eigenvalue(m).unwrap_or(f64::NAN);
    let max_eig = |m: &Matrix| crate::linalg::max_eigenvalue(m).unwrap_or(f64::NAN);
    vec![
        Check::le("P idempotent", p.matmul(p).sub(p).max_abs(), tol.psd * (1.0 + p.max_abs())),
        Check::le("SP symmetric", sp_m.asymmetry(), tol.psd * scale),
        Check::ge("SP psd", min_eig(&sp_m), -tol.psd * scale),
        Check::le("S(I-P) nsd", max_eig(&s_imp), tol.psd * scale),
        Check::ge("S(2P-I) pd", min_eig(&s_2pi), tol.psd * scale),
    ]
}

impl LipschitzGraph {
    pub fn index(&self) -> usize {
        self.axes.len()
    }

    /// `f(u) = min_i f_i + |u - u_i|`.
    pub fn value_at(&self, u: &[f64]) -> f64 {
        mcshane(&self.anchors, u)
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    /// Node coordinates of flat index `idx`.
    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        let mut u = vec![0.0; self.axes.len()];
        for (a, axis) in self.axes.iter().enumerate().rev() {
            u[a] = axis[idx % axis.len()];
            idx /= axis.len();
        }
        u
    }

    fn node_multi(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (a, axis) in self.axes.iter().enumerate().rev() {
            out[a] = idx % axis.len();
            idx /= axis.len();
        }
        out
    }

    fn flat(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (i, axis)| acc * axis.len() + i)
    }

    /// Point of the graph above `u`, in original coordinates.
    pub fn point(&self, u: &[f64]) -> Vec<f64> {
        let mut w = u.to_vec();
        w.push(self.value_at(u));
        self.frame.from_canonical(&w)
    }

    /// Largest `|f(u) - f(v)| - |u - v|` over all node pairs.
    pub fn lipschitz_excess(&self, exec: Execution) -> f64 {
        let n = self.node_count();
        let nodes: Vec<Vec<f64>> = (0..n).map(|i| self.node(i)).collect();
        exec.map_range(n, |i| {
            let mut worst = f64::NEG_INFINITY;
            for j in i + 1..n {
                let gap = (self.values[i] - self.values[j]).abs() - norm(&sub(&nodes[i], &nodes[j]));
                worst = worst.max(gap);
            }
            worst
        })
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `S(x(u), y) - S(x(u), x(u)) / 2` in canonical coordinates `(a, b)`
    /// of `y`.
    fn piece(&self, u: &[f64], a: &[f64], b: f64) -> f64 {
        let f = self.value_at(u);
        dot(u, a) - b * f - 0.5 * (norm_sq(u) - f * f)
    }

    fn piece_at_node(&self, idx: usize, a: &[f64], b: f64) -> f64 {
        let u = self.node(idx);
        let f = self.values[idx];
        dot(&u, a) - b * f - 0.5 * (norm_sq(&u) - f * f)
    }
}

fn mcshane(anchors: &[(Vec<f64>, f64)], u: &[f64]) -> f64 {
    anchors
        .iter()
        .map(|(ui, fi)| fi + norm(&sub(u, ui)))
        .fold(f64::INFINITY, f64::min)
}

fn check_dim(sp: &SSpace, x: &[f64]) -> Result<()> {
    if x.len() != sp.dim() {
        return Err(Error::DimensionMismatch {
            expected: sp.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

fn check_set_dim(sp: &SSpace, g: &MonotoneSet) -> Result<()> {
    if g.dim() != sp.dim() {
        return Err(Error::DimensionMismatch {
            expected: sp.dim(),
            found: g.dim(),
        });
    }
    Ok(())
}

/// Affine piece `S(x, y) - S(x, x) / 2`.
pub fn affine_piece(sp: &SSpace, x: &[f64], y: &[f64]) -> f64 {
    sp.form(x, y) - 0.5 * sp.sq(x)
}

fn proj_slack(tol: &Tolerances, y: &[f64]) -> f64 {
    tol.proj * (1.0 + norm_sq(y))
}

pub fn psi(sp: &SSpace, g: &MonotoneSet, y: &[f64], tol: &Tolerances) -> Result<FitzEval> {
    check_dim(sp, y)?;
    check_set_dim(sp, g)?;
    match g {
        MonotoneSet::Finite(points) => {
            let vals: Vec<f64> = points.iter().map(|x| affine_piece(sp, x, y)).collect();
            let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = proj_slack(tol, y);
            let maximizers = points
                .iter()
                .zip(&vals)
                .filter(|(_, v)| **v >= best - slack)
                .map(|(x, _)| x.clone())
                .collect();
            Ok(FitzEval {
                value: FitzValue::Finite(best),
                maximizers,
                lower_bound: false,
            })
        }
        MonotoneSet::Affine(a) => Ok(match a.maximizer(sp, y, tol) {
            Some(x) => FitzEval {
                value: FitzValue::Finite(affine_piece(sp, &x, y)),
                maximizers: vec![x],
                lower_bound: false,
            },
            None => FitzEval {
                value: FitzValue::PlusInfinity,
                maximizers: Vec::new(),
                lower_bound: false,
            },
        }),
        MonotoneSet::Graph(graph) => {
            let found = graph_search(graph, y, tol);
            Ok(FitzEval {
                value: FitzValue::Finite(found.value),
                maximizers: found.maximizers.iter().map(|u| graph.point(u)).collect(),
                lower_bound: true,
            })
        }
    }
}

struct GraphSearch {
    value: f64,
    maximizers: Vec<Vec<f64>>,
    on_boundary: bool,
}

const GRAPH_CANDIDATES: usize = 8;

fn graph_search(graph: &LipschitzGraph, y: &[f64], tol: &Tolerances) -> GraphSearch {
    let w = graph.frame.to_canonical(y);
    let m = graph.index();
    let (a, b) = (&w[..m], w[m]);
    let n = graph.node_count();
    let vals: Vec<f64> = (0..n).map(|i| graph.piece_at_node(i, a, b)).collect();

    // Grid local maxima, best first.
    let mut cand: Vec<usize> = (0..n)
        .filter(|&i| {
            let multi = graph.node_multi(i);
            (0..m).all(|ax| {
                let mut ok = true;
                for delta in [-1i64, 1] {
                    let k = multi[ax] as i64 + delta;
                    if k >= 0 && (k as usize) < graph.axes[ax].len() {
                        let mut nb = multi.clone();
                        nb[ax] = k as usize;
                        ok &= vals[i] >= vals[graph.flat(&nb)];
                    }
                }
                ok
            })
        })
        .collect();
    cand.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
    cand.truncate(GRAPH_CANDIDATES);
    if cand.is_empty() {
        cand.push(0);
    }

    let mut refined: Vec<(Vec<f64>, f64)> = cand
        .iter()
        .map(|&i| refine(graph, i, a, b, vals[i]))
        .collect();
    refined.sort_by(|x, y| y.1.total_cmp(&x.1));
    let best = refined[0].1;
    let slack = proj_slack(tol, y);
    let mut maximizers: Vec<Vec<f64>> = Vec::new();
    for (u, v) in &refined {
        if *v >= best - slack && !maximizers.iter().any(|q| norm(&sub(q, u)) <= 1e-9 * (1.0 + norm(u))) {
            maximizers.push(u.clone());
        }
    }
    let on_boundary = maximizers.iter().any(|u| {
        u.iter().zip(&graph.axes).any(|(c, axis)| {
            let h = (axis[axis.len() - 1] - axis[0]) / (axis.len().max(2) - 1) as f64;
            *c <= axis[0] + 0.5 * h || *c >= axis[axis.len() - 1] - 0.5 * h
        })
    });
    GraphSearch {
        value: best,
        maximizers,
        on_boundary: on_boundary && m > 0,
    }
}

/// Coordinate-wise golden-section search in the cell around a node.
fn refine(graph: &LipschitzGraph, idx: usize, a: &[f64], b: f64, start: f64) -> (Vec<f64>, f64) {
    let m = graph.index();
    let multi = graph.node_multi(idx);
    let mut u = graph.node(idx);
    let mut best = start;
    if m == 0 {
        return (u, best);
    }
    let bounds: Vec<(f64, f64)> = (0..m)
        .map(|ax| {
            let axis = &graph.axes[ax];
            let i = multi[ax];
            (axis[i.saturating_sub(1)], axis[(i + 1).min(axis.len() - 1)])
        })
        .collect();
    let sweeps = if m == 1 { 1 } else { 25 };
    for _ in 0..sweeps {
        let before = best;
        for ax in 0..m {
            let (lo, hi) = bounds[ax];
            let mut probe = u.clone();
            let mut eval = |t: f64| {
                probe[ax] = t;
                graph.piece(&probe, a, b)
            };
            let (t, v) = golden_max(&mut eval, lo, hi);
            if v > best {
                best = v;
                u[ax] = t;
            }
        }
        if best - before <= 1e-15 * (1.0 + best.abs()) {
            break;
        }
    }
    (u, best)
}

fn golden_max(f: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let width = hi - lo;
    for _ in 0..200 {
        if hi - lo <= 1e-14 * (1.0 + width + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `phi_G(y) = S(y, y) - 2 psi_G(y)`.
pub fn phi(sp: &SSpace, g: &MonotoneSet, y: &[f64], tol: &Tolerances) -> Result<f64> {
    match psi(sp, g, y, tol)?.value {
        FitzValue::Finite(v) => Ok(sp.sq(y) - 2.0 * v),
        FitzValue::PlusInfinity => Err(Error::UnboundedBelow),
    }
}

/// Points of `G` attaining `phi_G(y)`.
pub fn project(sp: &SSpace, g: &MonotoneSet, y: &[f64], tol: &Tolerances) -> Result<Vec<Vec<f64>>> {
    check_dim(sp, y)?;
    check_set_dim(sp, g)?;
    if let MonotoneSet::Graph(graph) = g {
        let found = graph_search(graph, y, tol);
        if found.on_boundary {
            return Err(Error::EmptyProjection);
        }
        return Ok(found.maximizers.iter().map(|u| graph.point(u)).collect());
    }
    let e = psi(sp, g, y, tol)?;
    if !e.value.is_finite() {
        return Err(Error::UnboundedBelow);
    }
    if e.maximizers.is_empty() {
        return Err(Error::EmptyProjection);
    }
    Ok(e.maximizers)
}

/// Membership of `x` in `G` within `tol * (1 + |x|)`.
pub fn contains(sp: &SSpace, g: &MonotoneSet, x: &[f64], tol: f64) -> bool {
    if x.len() != sp.dim() || g.dim() != sp.dim() {
        return false;
    }
    let slack = tol * (1.0 + norm(x));
    match g {
        MonotoneSet::Finite(points) => points.iter().any(|p| norm(&sub(p, x)) <= slack),
        MonotoneSet::Affine(a) => norm(&sub(&a.linear_projection(x), x)) <= slack,
        MonotoneSet::Graph(graph) => {
            let w = graph.frame.to_canonical(x);
            let m = graph.index();
            (w[m] - graph.value_at(&w[..m])).abs() <= slack
        }
    }
}

/// `x` lies in `G` and attains `psi_G(y)` within the projection tolerance.
pub fn attains(sp: &SSpace, g: &MonotoneSet, x: &[f64], y: &[f64], tol: &Tolerances) -> bool {
    if !contains(sp, g, x, tol.proj) {
        return false;
    }
    match psi(sp, g, y, tol) {
        Ok(FitzEval {
            value: FitzValue::Finite(v),
            ..
        }) => affine_piece(sp, x, y) >= v - proj_slack(tol, y),
        _ => false,
    }
}

/// `y` lies in the forward set `Q_G^eps(x)`: both `y` and the reflected
/// point `x + eps (x - y)` project onto `x`.
pub fn q_eps_membership(sp: &SSpace, g: &MonotoneSet, x: &[f64], y: &[f64], eps: f64, tol: &Tolerances) -> bool {
    if !(eps > 0.0) || x.len() != sp.dim() || y.len() != sp.dim() {
        return false;
    }
    let reflected: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + eps * (a - b)).collect();
    attains(sp, g, x, y, tol) && attains(sp, g, x, &reflected, tol)
}

/// First pair `(i, j, S(d, d))` whose scalar square falls below the slack.
fn monotonicity_violation(sp: &SSpace, points: &[Vec<f64>], slack: f64) -> Option<(usize, usize, f64)> {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = sub(&points[i], &points[j]);
            let v = sp.sq(&d);
            if v < -slack * (1.0 + norm_sq(&d)) {
                return Some((i, j, v));
            }
        }
    }
    None
}

pub fn is_s_monotone(sp: &SSpace, points: &[Vec<f64>], tol: &Tolerances) -> bool {
    points.iter().all(|p| p.len() == sp.dim()) && monotonicity_violation(sp, points, tol.monotone).is_none()
}

/// Every pair of distinct points has scalar square strictly above the slack.
pub fn is_strictly_monotone(sp: &SSpace, points: &[Vec<f64>], tol: &Tolerances) -> bool {
    if points.iter().any(|p| p.len() != sp.dim()) {
        return false;
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = sub(&points[i], &points[j]);
            if norm(&d) <= tol.merge * (1.0 + norm(&points[i])) {
                continue;
            }
            if sp.sq(&d) <= tol.monotone * (1.0 + norm_sq(&d)) {
                return false;
            }
        }
    }
    true
}

/// Maximal extension of a finite monotone set when `S` has exactly one
/// negative eigenvalue: in canonical coordinates the points are a
/// 1-Lipschitz graph, extended by `f(u) = min_i f_i + |u - u_i|`.
pub fn mcshane_maximal_extension(
    sp: &SSpace,
    points: &[Vec<f64>],
    grid: GridConfig,
    tol: &Tolerances,
) -> Result<MonotoneSet> {
    let d = sp.dim();
    let m = sp.index();
    if d - m > 1 {
        return Err(Error::CodomainTooLarge { codomain: d - m });
    }
    if d == m {
        return Err(Error::InvalidSet(
            "S is positive definite; the only maximal set is the whole space".into(),
        ));
    }
    if points.is_empty() {
        return Err(Error::InvalidSet("no points to extend".into()));
    }
    for p in points {
        check_dim(sp, p)?;
    }
    if let Some((i, j, value)) = monotonicity_violation(sp, points, tol.monotone) {
        return Err(Error::NotMonotone { i, j, value });
    }
    if grid.nodes_per_axis < 2 && m > 0 {
        return Err(Error::InvalidConfig("grid needs at least two nodes per axis".into()));
    }
    let frame = sp.canonical_frame();
    let anchors: Vec<(Vec<f64>, f64)> = points
        .iter()
        .map(|p| {
            let w = frame.to_canonical(p);
            (w[..m].to_vec(), w[m])
        })
        .collect();

    let mut axes = Vec::with_capacity(m);
    for ax in 0..m {
        let lo = anchors.iter().map(|(u, _)| u[ax]).fold(f64::INFINITY, f64::min);
        let hi = anchors.iter().map(|(u, _)| u[ax]).fold(f64::NEG_INFINITY, f64::max);
        let ext = (hi - lo).max(grid.extent_floor);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * ext * (1.0 + 2.0 * grid.inflation);
        let (a, b) = (mid - half, mid + half);
        let n = grid.nodes_per_axis;
        let mut axis: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
        axis.extend(anchors.iter().map(|(u, _)| u[ax]));
        axis.sort_by(f64::total_cmp);
        axis.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
        axes.push(axis);
    }
    let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    let total = match total {
        Some(t) if t <= grid.max_nodes => t,
        _ => {
            return Err(Error::DimensionCap {
                what: "grid nodes",
                size: total.unwrap_or(usize::MAX),
                cap: grid.max_nodes,
            })
        }
    };
    let mut graph = LipschitzGraph {
        frame,
        axes,
        values: Vec::new(),
        anchors,
    };
    graph.values = (0..total).map(|i| mcshane(&graph.anchors, &graph.node(i))).collect();
    Ok(MonotoneSet::Graph(graph))
}

/// Conjugate of `psi_G` for a finite `G` at `p`:
/// `min { sum l_i S(x_i, x_i) / 2 : sum l_i S x_i = p, l in simplex }`.
pub fn psi_conjugate_at(sp: &SSpace, g: &MonotoneSet, p: &[f64], tol: &Tolerances) -> Result<FitzValue> {
    check_dim(sp, p)?;
    let MonotoneSet::Finite(points) = g else {
        return Err(Error::InvalidSet("conjugate is only available for finite sets".into()));
    };
    let caps = LpCaps::default();
    if points.len() > caps.max_cols {
        return Err(Error::DimensionCap {
            what: "conjugate LP columns",
            size: points.len(),
            cap: caps.max_cols,
        });
    }
    let sx: Vec<Vec<f64>> = points.iter().map(|x| sp.apply(x)).collect();
    let mut lp = LpProblem::new(points.iter().map(|x| 0.5 * sp.sq(x)).collect());
    lp.add_row(vec![1.0; points.len()], 1.0);
    for k in 0..sp.dim() {
        lp.add_row(sx.iter().map(|v| v[k]).collect(), p[k]);
    }
    let out = lp_solve_with(&lp, tol.lp, caps)?;
    Ok(match out.status {
        LpStatus::Optimal => FitzValue::Finite(out.value),
        // The feasible set is bounded, so this cannot be unbounded.
        LpStatus::Infeasible | LpStatus::Unbounded => FitzValue::PlusInfinity,
    })
}

/// Central-difference gradient of `psi_G` with step `h`.
pub fn finite_difference_gradient(sp: &SSpace, g: &MonotoneSet, y: &[f64], h: f64, tol: &Tolerances) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let mut plus = y.to_vec();
        let mut minus = y.to_vec();
        plus[i] += h;
        minus[i] -= h;
        let fp = psi(sp, g, &plus, tol)?.value.finite().ok_or(Error::BoundaryPoint)?;
        let fm = psi(sp, g, &minus, tol)?.value.finite().ok_or(Error::BoundaryPoint)?;
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Generators `{S x : x in P_G(y)}` of the subdifferential at an interior
/// point of the domain of `psi_G`.
pub fn subdifferential_interior(sp: &SSpace, g: &MonotoneSet, y: &[f64], tol: &Tolerances) -> Result<Vec<Vec<f64>>> {
    check_dim(sp, y)?;
    let delta = 1e-5 * (1.0 + norm(y));
    for i in 0..y.len() {
        for s in [-1.0, 1.0] {
            let mut probe = y.to_vec();
            probe[i] += s * delta;
            if !psi(sp, g, &probe, tol)?.value.is_finite() {
                return Err(Error::BoundaryPoint);
            }
        }
    }
    let proj = project(sp, g, y, tol).map_err(|e| match e {
        Error::UnboundedBelow => Error::BoundaryPoint,
        other => other,
    })?;
    Ok(proj.iter().map(|x| sp.apply(x)).collect())
}

/// `psi` at many probe points.
pub fn psi_batch(sp: &SSpace, g: &MonotoneSet, ys: &[Vec<f64>], tol: &Tolerances, exec: Execution) -> Vec<Result<FitzEval>> {
    exec.map(ys, |y| psi(sp, g, y, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn space(rows: &[[f64; 2]]) -> SSpace {
        SSpace::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn swap2() -> SSpace {
        space(&[[0.0, 1.0], [1.0, 0.0]])
    }

    fn minkowski() -> SSpace {
        SSpace::new(Matrix::from_diag(&[1.0, -1.0])).unwrap()
    }

    fn x_axis(sp: &SSpace) -> MonotoneSet {
        MonotoneSet::affine(sp, vec![0.0, 0.0], Matrix::from_diag(&[1.0, 0.0]), &tol()).unwrap()
    }

    fn value(e: FitzEval) -> f64 {
        e.value.finite().unwrap()
    }

    #[test]
    fn psi_examples() {
        let sp = SSpace::new(Matrix::identity(2)).unwrap();
        let whole = MonotoneSet::affine(&sp, vec![0.0; 2], Matrix::identity(2), &tol()).unwrap();
        assert!((value(psi(&sp, &whole, &[3.0, 4.0], &tol()).unwrap()) - 12.5).abs() < 1e-12);

        let neg = SSpace::new(Matrix::from_diag(&[-1.0])).unwrap();
        let single = MonotoneSet::finite(&neg, vec![vec![1.0]], &tol()).unwrap();
        assert_eq!(value(psi(&neg, &single, &[5.0], &tol()).unwrap()), -4.5);

        let sp = swap2();
        let g = MonotoneSet::finite(&sp, vec![vec![0.0, 0.0], vec![1.0, 1.0]], &tol()).unwrap();
        let e = psi(&sp, &g, &[2.0, 0.0], &tol()).unwrap();
        assert_eq!(e.value, FitzValue::Finite(1.0));
        assert_eq!(e.maximizers, vec![vec![1.0, 1.0]]);
        assert!(!e.lower_bound);
    }

    #[test]
    fn phi_examples() {
        let sp = swap2();
        let g = MonotoneSet::finite(&sp, vec![vec![0.0, 0.0], vec![1.0, 1.0]], &tol()).unwrap();
        assert!(phi(&sp, &g, &[1.0, 1.0], &tol()).unwrap().abs() < 1e-15);

        let mk = minkowski();
        assert_eq!(phi(&mk, &x_axis(&mk), &[0.0, 2.0], &tol()).unwrap(), -4.0);

        let line = SSpace::new(Matrix::identity(1)).unwrap();
        let all = MonotoneSet::affine(&line, vec![0.0], Matrix::identity(1), &tol()).unwrap();
        assert_eq!(phi(&line, &all, &[-7.0], &tol()).unwrap(), 0.0);
    }

    #[test]
    fn phi_matches_direct_minimum_on_finite_sets() {
        let sp = swap2();
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 3.0]];
        let g = MonotoneSet::finite(&sp, pts.clone(), &tol()).unwrap();
        for y in [[2.0, 0.0], [-1.0, 4.0], [0.5, 0.5]] {
            let direct = pts
                .iter()
                .map(|x| sp.sq(&sub(x, &y)))
                .fold(f64::INFINITY, f64::min);
            assert!((phi(&sp, &g, &y, &tol()).unwrap() - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn project_examples() {
        let sp = swap2();
        let diag = MonotoneSet::affine(
            &sp,
            vec![0.0, 0.0],
            Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap(),
            &tol(),
        )
        .unwrap();
        assert_eq!(project(&sp, &diag, &[2.0, 0.0], &tol()).unwrap(), vec![vec![1.0, 1.0]]);

        let mk = minkowski();
        assert_eq!(project(&mk, &x_axis(&mk), &[3.0, 7.0], &tol()).unwrap(), vec![vec![3.0, 0.0]]);

        let g = MonotoneSet::finite(&sp, vec![vec![0.0, 0.0], vec![1.0, 1.0]], &tol()).unwrap();
        assert!(project(&sp, &g, &[1.0, 1.0], &tol())
            .unwrap()
            .contains(&vec![1.0, 1.0]));
    }

    #[test]
    fn q_eps_examples() {
        let mk = minkowski();
        let g = x_axis(&mk);
        assert!(q_eps_membership(&mk, &g, &[2.0, 0.0], &[2.0, 0.0], 0.3, &tol()));
        assert!(q_eps_membership(&mk, &g, &[0.0, 0.0], &[0.0, 1.0], 1.0, &tol()));
        let id = SSpace::new(Matrix::identity(2)).unwrap();
        let whole = MonotoneSet::affine(&id, vec![0.0; 2], Matrix::identity(2), &tol()).unwrap();
        for eps in [1e-3, 1.0, 10.0] {
            assert!(!q_eps_membership(&id, &whole, &[0.0, 0.0], &[0.0, 1.0], eps, &tol()));
        }
    }

    #[test]
    fn monotonicity_examples() {
        let sp = swap2();
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 3.0]];
        assert!(is_s_monotone(&sp, &pts, &tol()));
        assert!(is_strictly_monotone(&sp, &pts, &tol()));
        assert!(!is_s_monotone(&sp, &[vec![0.0, 1.0], vec![1.0, 0.0]], &tol()));
        assert!(is_s_monotone(&sp, &[vec![4.0, -1.0]], &tol()));
        assert!(is_strictly_monotone(&sp, &[vec![4.0, -1.0]], &tol()));
        // Flat pair: monotone but not strictly.
        assert!(is_s_monotone(&sp, &[vec![0.0, 0.0], vec![1.0, 0.0]], &tol()));
        assert!(!is_strictly_monotone(&sp, &[vec![0.0, 0.0], vec![1.0, 0.0]], &tol()));
        assert!(matches!(
            MonotoneSet::finite(&sp, vec![vec![0.0, 1.0], vec![1.0, 0.0]], &tol()),
            Err(Error::NotMonotone { .. })
        ));
    }

    fn small_grid() -> GridConfig {
        GridConfig {
            nodes_per_axis: 41,
            ..GridConfig::default()
        }
    }

    #[test]
    fn mcshane_examples() {
        let mk = minkowski();
        let MonotoneSet::Graph(g) = mcshane_maximal_extension(&mk, &[vec![0.5, 2.0]], small_grid(), &tol()).unwrap()
        else {
            panic!("expected a graph");
        };
        for u in [-3.0, 0.5, 1.25, 4.0] {
            assert!((g.value_at(&[u]) - (2.0 + (u - 0.5f64).abs())).abs() < 1e-15);
        }
        let MonotoneSet::Graph(g) =
            mcshane_maximal_extension(&mk, &[vec![0.0, 0.0], vec![2.0, 0.0]], small_grid(), &tol()).unwrap()
        else {
            panic!("expected a graph");
        };
        assert_eq!(g.value_at(&[1.0]), 1.0);
        assert!(g.lipschitz_excess(Execution::Sequential) <= 1e-12);
        assert!(matches!(
            mcshane_maximal_extension(&mk, &[vec![0.0, 0.0], vec![1.0, 2.0]], small_grid(), &tol()),
            Err(Error::NotMonotone { .. })
        ));
        let three = SSpace::new(Matrix::from_diag(&[1.0, -1.0, -1.0])).unwrap();
        assert!(matches!(
            mcshane_maximal_extension(&three, &[vec![0.0; 3]], small_grid(), &tol()),
            Err(Error::CodomainTooLarge { codomain: 2 })
        ));
    }

    #[test]
    fn graph_psi_on_the_graph() {
        let mk = minkowski();
        let set = mcshane_maximal_extension(&mk, &[vec![0.0, 0.0], vec![2.0, 0.5]], small_grid(), &tol()).unwrap();
        let MonotoneSet::Graph(g) = &set else { unreachable!() };
        for u in [0.3, 1.0, 1.7] {
            let x = g.point(&[u]);
            let e = psi(&mk, &set, &x, &tol()).unwrap();
            assert!(e.lower_bound);
            assert!((value(e) - 0.5 * mk.sq(&x)).abs() <= 1e-9 * (1.0 + norm_sq(&x)));
            assert!(contains(&mk, &set, &x, 1e-12));
        }
        assert!(!set.is_known_maximal(&mk));
    }

    #[test]
    fn conjugate_examples() {
        let sp = swap2();
        let x = vec![1.0, 2.0];
        let g = MonotoneSet::finite(&sp, vec![x.clone()], &tol()).unwrap();
        let c = psi_conjugate_at(&sp, &g, &sp.apply(&x), &tol()).unwrap();
        assert!((c.finite().unwrap() - 0.5 * sp.sq(&x)).abs() < 1e-12);

        let line = SSpace::new(Matrix::identity(1)).unwrap();
        let g = MonotoneSet::finite(&line, vec![vec![0.0], vec![1.0]], &tol()).unwrap();
        assert!((psi_conjugate_at(&line, &g, &[0.5], &tol()).unwrap().finite().unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(psi_conjugate_at(&line, &g, &[2.0], &tol()).unwrap(), FitzValue::PlusInfinity);
    }

    #[test]
    fn subdifferential_examples() {
        let mk = minkowski();
        let g = x_axis(&mk);
        assert_eq!(subdifferential_interior(&mk, &g, &[1.0, 5.0], &tol()).unwrap(), vec![vec![1.0, 0.0]]);
        let y = [0.7, -1.3];
        let sub_g = subdifferential_interior(&mk, &g, &y, &tol()).unwrap();
        let h = 1e-5 * (1.0 + norm(&y));
        let fd = finite_difference_gradient(&mk, &g, &y, h, &tol()).unwrap();
        assert!(norm(&sub(&fd, &sub_g[0])) < 1e-5);

        let sp = swap2();
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let g = MonotoneSet::finite(&sp, pts, &tol()).unwrap();
        assert_eq!(subdifferential_interior(&sp, &g, &[1.0, 1.0], &tol()).unwrap(), vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn null_direction_gives_infinite_psi() {
        // S = diag(1, -1) on the light-like line t (1, 1): S(u, u) = 0.
        let mk = minkowski();
        let p = Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let set = MonotoneSet::affine_relaxed(&mk, vec![0.0, 0.0], p.clone(), &tol()).unwrap();
        assert!(!set.is_known_maximal(&mk));
        assert!(MonotoneSet::affine(&mk, vec![0.0, 0.0], p, &tol()).is_err());
        // S(u, y) = y1 - y2 vanishes only on the line itself.
        assert!(psi(&mk, &set, &[1.0, 1.0], &tol()).unwrap().value.is_finite());
        assert_eq!(psi(&mk, &set, &[1.0, 0.0], &tol()).unwrap().value, FitzValue::PlusInfinity);
        assert!(matches!(phi(&mk, &set, &[1.0, 0.0], &tol()), Err(Error::UnboundedBelow)));
        assert!(matches!(
            subdifferential_interior(&mk, &set, &[1.0, 1.0], &tol()),
            Err(Error::BoundaryPoint)
        ));
    }

    #[test]
    fn dimension_errors() {
        let sp = swap2();
        let g = MonotoneSet::finite(&sp, vec![vec![0.0, 0.0]], &tol()).unwrap();
        assert!(matches!(psi(&sp, &g, &[1.0], &tol()), Err(Error::DimensionMismatch { .. })));
    }

    fn random_strict_affine(sp: &SSpace, raw: &[f64]) -> MonotoneSet {
        // Range of P: the positive eigenspace of S shifted by a graph map;
        // simplest strict choice is the spectral projector, moved by x0.
        let e = sp.eigen();
        let d = sp.dim();
        let mut p = Matrix::zeros(d, d);
        for k in 0..d {
            if e.eigenvalues[k] > 0.0 {
                let v = e.vector(k);
                p = p.add(&Matrix::outer(&v, &v));
            }
        }
        MonotoneSet::affine(sp, raw[..d].to_vec(), p, &tol()).unwrap()
    }

    fn random_space(d: usize, m: usize, raw: &[f64]) -> Option<SSpace> {
        let mut b = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                b[(i, j)] += 0.3 * raw[i * d + j];
            }
        }
        let diag: Vec<f64> = (0..d).map(|i| if i < m { 1.0 + raw[20 + i].abs() } else { -1.0 - raw[20 + i].abs() }).collect();
        SSpace::new(b.transpose().matmul(&Matrix::from_diag(&diag)).matmul(&b)).ok()
    }

    proptest! {
        #[test]
        fn affine_psi_properties(d in 1usize..=4, m_frac in 0.0f64..=1.0, raw in prop::collection::vec(-2.0f64..2.0, 40)) {
            let m = ((d as f64) * m_frac).round() as usize;
            let Some(sp) = random_space(d, m, &raw) else { return Ok(()); };
            let g = random_strict_affine(&sp, &raw[30..]);
            let t = tol();
            let y1 = raw[..d].to_vec();
            let y2 = raw[10..10 + d].to_vec();
            let p1 = value(psi(&sp, &g, &y1, &t).unwrap());
            let p2 = value(psi(&sp, &g, &y2, &t).unwrap());
            prop_assert!(p1 + 1e-9 * (1.0 + norm_sq(&y1)) >= 0.5 * sp.sq(&y1));
            let mid: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 0.5 * (a + b)).collect();
            let pm = value(psi(&sp, &g, &mid, &t).unwrap());
            prop_assert!(pm <= 0.5 * (p1 + p2) + 1e-9 * (1.0 + norm_sq(&y1) + norm_sq(&y2)));
            let x = project(&sp, &g, &y1, &t).unwrap().remove(0);
            prop_assert!(contains(&sp, &g, &x, 1e-9));
            prop_assert!((value(psi(&sp, &g, &x, &t).unwrap()) - 0.5 * sp.sq(&x)).abs() <= 1e-9 * (1.0 + norm_sq(&x)));
            let ph = phi(&sp, &g, &y1, &t).unwrap();
            prop_assert!((ph - (sp.sq(&y1) - 2.0 * p1)).abs() <= 1e-9 * (1.0 + norm_sq(&y1)));
        }

        #[test]
        fn finite_conjugate_dominates_psi(raw in prop::collection::vec(-2.0f64..2.0, 12)) {
            let sp = swap2();
            // Monotone in 1D order: sort by first coordinate, use a monotone second.
            let mut xs: Vec<f64> = raw[..4].to_vec();
            xs.sort_by(f64::total_cmp);
            let pts: Vec<Vec<f64>> = xs.iter().map(|&a| vec![a, a * a.abs() + a]).collect();
            let g = MonotoneSet::finite(&sp, pts.clone(), &tol()).unwrap();
            for x in &pts {
                let c = psi_conjugate_at(&sp, &g, &sp.apply(x), &tol()).unwrap().finite().unwrap();
                prop_assert!((c - 0.5 * sp.sq(x)).abs() <= 1e-8);
            }
            let probe = vec![raw[5], raw[6]];
            let c = psi_conjugate_at(&sp, &g, &sp.apply(&probe), &tol()).unwrap();
            if let Some(c) = c.finite() {
                prop_assert!(c >= value(psi(&sp, &g, &probe, &tol()).unwrap()) - 1e-8);
            }
        }

        #[test]
        fn mcshane_is_lipschitz_and_interpolates(raw in prop::collection::vec(-2.0f64..2.0, 8)) {
            let mk = minkowski();
            // Anchors (u, f) with |df| <= |du| by construction.
            let mut us: Vec<f64> = raw[..4].to_vec();
            us.sort_by(f64::total_cmp);
            let mut pts = vec![vec![us[0], 0.0]];
            for w in us.windows(2) {
                let last = pts.last().unwrap()[1];
                pts.push(vec![w[1], last + 0.9 * (w[1] - w[0]) * raw[4 + pts.len()].signum()]);
            }
            let set = mcshane_maximal_extension(&mk, &pts, small_grid(), &tol()).unwrap();
            let MonotoneSet::Graph(g) = &set else { unreachable!() };
            prop_assert!(g.lipschitz_excess(Execution::Sequential) <= 1e-12);
            for p in &pts {
                let idx = (0..g.node_count()).find(|&i| (g.node(i)[0] - p[0]).abs() < 1e-12).unwrap();
                prop_assert!((g.values[idx] - p[1]).abs() <= 1e-12);
            }
        }
    }
}
