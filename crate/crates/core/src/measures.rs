//! Finitely supported measures and martingale plans.

use crate::error::{Error, Result};
use crate::linalg::{lp_solve_with, norm, norm_sq, LpCaps, LpProblem, LpStatus, Matrix};
use crate::space::SSpace;
use crate::tolerance::Tolerances;

/// Weighted atoms in `R^d`. Weights are positive and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validates and normalizes. Weights must sum to one within `1e-9`;
    /// atoms closer than the merge tolerance are combined.
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::with_tolerances(atoms, weights, &Tolerances::default())
    }

    pub fn with_tolerances(atoms: Vec<Vec<f64>>, weights: Vec<f64>, tol: &Tolerances) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let d = atoms[0].len();
        if d == 0 {
            return Err(Error::InvalidMeasure("atoms must have dimension >= 1".into()));
        }
        for a in &atoms {
            if a.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: a.len(),
                });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMeasure("non-finite atom coordinate".into()));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMeasure("weights must be finite and positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }

        // Merge near-duplicates, keeping first-occurrence order.
        let n = atoms.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| atoms[a][0].total_cmp(&atoms[b][0]));
        let mut rep: Vec<usize> = (0..n).collect();
        for (pos, &i) in order.iter().enumerate() {
            if rep[i] != i {
                continue;
            }
            for &j in &order[pos + 1..] {
                if atoms[j][0] - atoms[i][0] > tol.merge {
                    break;
                }
                if rep[j] == j && crate::linalg::norm(&crate::linalg::sub(&atoms[i], &atoms[j])) <= tol.merge {
                    let (keep, drop) = if i < j { (i, j) } else { (j, i) };
                    rep[drop] = keep;
                }
            }
        }
        let mut merged_atoms = Vec::new();
        let mut merged_weights = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let mut r = rep[i];
            while rep[r] != r {
                r = rep[r];
            }
            if slot[r] == usize::MAX {
                slot[r] = merged_atoms.len();
                merged_atoms.push(atoms[r].clone());
                merged_weights.push(0.0);
            }
            merged_weights[slot[r]] += weights[i];
        }
        let total: f64 = merged_weights.iter().sum();
        merged_weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            atoms: merged_atoms,
            weights: merged_weights,
        })
    }

    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let n = atoms.len().max(1);
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            for (ci, ai) in c.iter_mut().zip(a) {
                *ci += w * ai;
            }
        }
        c
    }

    /// Centered second moments.
    pub fn covariance(&self) -> Matrix {
        let d = self.dim();
        let mean = self.barycenter();
        let mut cov = Matrix::zeros(d, d);
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            for i in 0..d {
                let di = a[i] - mean[i];
                for j in i..d {
                    cov[(i, j)] += w * di * (a[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        cov
    }

    /// `1 + max |y|^2` over the support; used to scale tolerances.
    pub fn scale(&self) -> f64 {
        1.0 + self.atoms.iter().map(|a| norm_sq(a)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub x: Vec<f64>,
    pub p: f64,
    /// Nonzero masses `(atom index of nu, w_jk)`.
    pub assignment: Vec<(usize, f64)>,
}

/// Finitely supported martingale coupling with y-marginal `nu`.
///
/// Each cluster is one x-atom; its assignment lists how much mass of
/// each `nu` atom it receives. The barycenter of the assigned mass is `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingalePlan {
    clusters: Vec<Cluster>,
}

impl MartingalePlan {
    /// Unchecked; see [`MartingalePlan::validate`].
    pub fn from_clusters(clusters: Vec<Cluster>) -> Self {
        Self { clusters }
    }

    /// Builds a plan from a mass matrix `masses[k][j] = w_jk`, placing each
    /// cluster at the barycenter of its mass. Light clusters are dropped.
    pub fn from_masses(nu: &DiscreteMeasure, masses: &[Vec<f64>], dust: f64) -> Self {
        let d = nu.dim();
        let mut clusters = Vec::with_capacity(masses.len());
        for row in masses {
            let mut x = vec![0.0; d];
            let mut p = 0.0;
            let mut assignment = Vec::new();
            for (j, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    p += w;
                    for (xi, yi) in x.iter_mut().zip(nu.atom(j)) {
                        *xi += w * yi;
                    }
                    assignment.push((j, w));
                }
            }
            if p <= dust {
                continue;
            }
            x.iter_mut().for_each(|v| *v /= p);
            clusters.push(Cluster { x, p, assignment });
        }
        Self { clusters }
    }

    /// Hard partition: atom `j` goes entirely to cluster `labels[j]`.
    pub fn from_labels(nu: &DiscreteMeasure, labels: &[usize]) -> Self {
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut masses = vec![vec![0.0; nu.len()]; k];
        for (j, &l) in labels.iter().enumerate() {
            masses[l][j] = nu.weight(j);
        }
        Self::from_masses(nu, &masses, 0.0)
    }

    /// `x = y`: every atom is its own cluster.
    pub fn identity(nu: &DiscreteMeasure) -> Self {
        let labels: Vec<usize> = (0..nu.len()).collect();
        Self::from_labels(nu, &labels)
    }

    /// A single cluster at the barycenter of `nu`.
    pub fn barycentric(nu: &DiscreteMeasure) -> Self {
        Self::from_labels(nu, &vec![0; nu.len()])
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Iterates over support pairs as `(cluster index, atom index, mass)`.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(k, c)| c.assignment.iter().map(move |&(j, w)| (k, j, w)))
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        self.clusters.iter().map(|c| c.x.clone()).collect()
    }

    /// y-marginal as a weight vector over `n` atoms.
    pub fn y_marginal(&self, n: usize) -> Vec<f64> {
        let mut q = vec![0.0; n];
        for (_, j, w) in self.support() {
            if j < n {
                q[j] += w;
            }
        }
        q
    }

    pub fn x_marginal(&self) -> Result<DiscreteMeasure> {
        let total: f64 = self.clusters.iter().map(|c| c.p).sum();
        DiscreteMeasure::new(
            self.clusters.iter().map(|c| c.x.clone()).collect(),
            self.clusters.iter().map(|c| c.p / total).collect(),
        )
    }

    /// Largest deviation of the y-marginal from the weights of `nu`.
    pub fn marginal_deviation(&self, nu: &DiscreteMeasure) -> f64 {
        self.y_marginal(nu.len())
            .iter()
            .zip(nu.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks indices, masses, marginal and barycenter constraints.
    pub fn validate(&self, nu: &DiscreteMeasure, tol: &Tolerances) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::InvalidPlan("plan has no clusters".into()));
        }
        let d = nu.dim();
        for (k, c) in self.clusters.iter().enumerate() {
            if c.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: c.x.len(),
                });
            }
            if c.x.iter().any(|v| !v.is_finite()) || !c.p.is_finite() || c.p <= 0.0 {
                return Err(Error::InvalidPlan(format!("cluster {k} has invalid x or p")));
            }
            let mut mass = 0.0;
            let mut bary = vec![0.0; d];
            for &(j, w) in &c.assignment {
                if j >= nu.len() {
                    return Err(Error::InvalidPlan(format!("cluster {k} references atom {j}")));
                }
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::InvalidPlan(format!("cluster {k} has a negative mass")));
                }
                mass += w;
                for (b, y) in bary.iter_mut().zip(nu.atom(j)) {
                    *b += w * y;
                }
            }
            if (mass - c.p).abs() > tol.martingale {
                return Err(Error::InvalidPlan(format!(
                    "cluster {k}: p = {} but assigned mass is {mass}",
                    c.p
                )));
            }
            let resid: f64 = bary
                .iter()
                .zip(&c.x)
                .map(|(b, x)| (b - c.p * x).powi(2))
                .sum::<f64>()
                .sqrt();
            if resid > tol.martingale * (1.0 + norm(&c.x)) {
                return Err(Error::InvalidPlan(format!(
                    "cluster {k}: barycenter of assigned mass differs from x by {resid:.3e}"
                )));
            }
        }
        let deviation = self.marginal_deviation(nu);
        if deviation > tol.martingale {
            return Err(Error::MarginalMismatch { deviation });
        }
        Ok(())
    }

    /// Drops dust clusters and merges clusters sharing the same `x`.
    pub fn normalized(&self, tol: &Tolerances) -> Self {
        let mut out: Vec<Cluster> = Vec::new();
        for c in &self.clusters {
            if c.p < tol.dust {
                continue;
            }
            let scale = 1.0 + norm(&c.x);
            if let Some(existing) = out
                .iter_mut()
                .find(|e| norm(&crate::linalg::sub(&e.x, &c.x)) <= tol.merge * scale)
            {
                existing.p += c.p;
                for &(j, w) in &c.assignment {
                    match existing.assignment.iter_mut().find(|(i, _)| *i == j) {
                        Some(slot) => slot.1 += w,
                        None => existing.assignment.push((j, w)),
                    }
                }
            } else {
                out.push(c.clone());
            }
        }
        for c in &mut out {
            c.assignment.sort_by_key(|(j, _)| *j);
        }
        Self { clusters: out }
    }

    /// `sum_k p_k S(x_k, x_k) / 2`, without the martingale cross-check.
    pub fn objective(&self, sp: &SSpace) -> f64 {
        0.5 * self.clusters.iter().map(|c| c.p * sp.sq(&c.x)).sum::<f64>()
    }

    /// `sum_jk w_jk S(x_k, y_j) / 2`.
    pub fn cross_objective(&self, sp: &SSpace, nu: &DiscreteMeasure) -> f64 {
        0.5 * self
            .clusters
            .iter()
            .map(|c| {
                c.assignment
                    .iter()
                    .map(|&(j, w)| w * sp.form(&c.x, nu.atom(j)))
                    .sum::<f64>()
            })
            .sum::<f64>()
    }
}

/// Value of a plan, `(1/2) sum p_k S(x_k, x_k)`, cross-checked against
/// `(1/2) sum w_jk S(x_k, y_j)`.
pub fn plan_value(sp: &SSpace, plan: &MartingalePlan, nu: &DiscreteMeasure) -> Result<f64> {
    let lhs = plan.objective(sp);
    let rhs = plan.cross_objective(sp, nu);
    let scale = 1.0 + lhs.abs() + rhs.abs();
    if (lhs - rhs).abs() > 1e-9 * scale {
        return Err(Error::MartingaleViolated { lhs, rhs });
    }
    Ok(lhs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexOrderCheck {
    pub dominated: bool,
    /// Martingale coupling of `mu` and `nu` when one exists.
    pub witness: Option<MartingalePlan>,
}

/// Is `mu` dominated by `nu` in the convex order? Decided by the
/// feasibility LP for a martingale coupling `pi_kj`.
pub fn convex_order_check(mu: &DiscreteMeasure, nu: &DiscreteMeasure, caps: LpCaps) -> Result<ConvexOrderCheck> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: nu.dim(),
            found: mu.dim(),
        });
    }
    let (k, n, d) = (mu.len(), nu.len(), nu.dim());
    let var = |a: usize, j: usize| a * n + j;
    let mut lp = LpProblem::new(vec![0.0; k * n]);
    for a in 0..k {
        let mut row = vec![0.0; k * n];
        for j in 0..n {
            row[var(a, j)] = 1.0;
        }
        lp.add_row(row, mu.weight(a));
    }
    for j in 0..n {
        let mut row = vec![0.0; k * n];
        for a in 0..k {
            row[var(a, j)] = 1.0;
        }
        lp.add_row(row, nu.weight(j));
    }
    for a in 0..k {
        for i in 0..d {
            let mut row = vec![0.0; k * n];
            for j in 0..n {
                row[var(a, j)] = nu.atom(j)[i];
            }
            lp.add_row(row, mu.weight(a) * mu.atom(a)[i]);
        }
    }
    let out = lp_solve_with(&lp, Tolerances::default().lp, caps)?;
    if out.status != LpStatus::Optimal {
        return Ok(ConvexOrderCheck {
            dominated: false,
            witness: None,
        });
    }
    let clusters = (0..k)
        .map(|a| Cluster {
            x: mu.atom(a).to_vec(),
            p: mu.weight(a),
            assignment: (0..n)
                .filter_map(|j| {
                    let w = out.solution[var(a, j)];
                    (w > 0.0).then_some((j, w))
                })
                .collect(),
        })
        .collect();
    Ok(ConvexOrderCheck {
        dominated: true,
        witness: Some(MartingalePlan::from_clusters(clusters)),
    })
}
