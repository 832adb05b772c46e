//! Closed-form solution when `nu` is Gaussian.
//!
//! With `W = Sigma^{1/2}` and `W S W = U diag(l) U^T`, the columns of
//! `V = W U` diagonalize `S` and `Sigma^{-1}` simultaneously. Splitting them
//! by the sign of `l` gives `Sigma = Q + R`, and `X = E Y + P (Y - E Y)` with
//! `P = Q Sigma^{-1}` is the optimal martingale map.
//!
//! The same `P` is optimal for any elliptically contoured law with the
//! given covariance, since only the conditional-mean property of the map
//! is used.

use crate::checks::Check;
use crate::error::{Error, Result};
use crate::fitzpatrick::{affine_checks, MonotoneSet};
use crate::linalg::{max_eigenvalue, min_eigenvalue, rank_tol, sub, sym_eig_tol, Matrix};
use crate::space::SSpace;
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDecomposition {
    pub q: Matrix,
    pub r: Matrix,
    pub p: Matrix,
    /// Generalized eigenvectors as columns, `V^T Sigma^{-1} V = I`.
    pub v: Matrix,
    /// Diagonal of `V^T S V`, descending.
    pub lambda: Vec<f64>,
    pub mean: Vec<f64>,
    pub sigma: Matrix,
    pub sigma_inv: Matrix,
    pub index: usize,
    pub primal_value: f64,
    pub dual_value: f64,
}

const SIGMA_HINT: &str = "; restrict the data to the support subspace of Sigma first";

fn check_sigma(sp: &SSpace, sigma: &Matrix, tol: &Tolerances) -> Result<(Matrix, Matrix)> {
    let d = sp.dim();
    if sigma.rows() != d || sigma.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: sigma.rows(),
        });
    }
    if !sigma.is_finite() {
        return Err(Error::InvalidConfig("Sigma must have finite entries".into()));
    }
    let e = sym_eig_tol(sigma, tol.sym)?;
    let min = *e.eigenvalues.last().expect("non-empty");
    if min <= tol.pd * sigma.norm() {
        return Err(Error::NotPositiveDefinite {
            what: "Sigma",
            min_eig: min,
            hint: SIGMA_HINT,
        });
    }
    let w = e.reassemble(f64::sqrt).symmetrized();
    let inv = e.reassemble(|l| 1.0 / l).symmetrized();
    Ok((w, inv))
}

/// Generalized eigenpairs of `S v = l Sigma^{-1} v`, with `V^T Sigma^{-1} V = I`.
fn generalized(sp: &SSpace, w: &Matrix, tol: &Tolerances) -> Result<(Vec<f64>, Matrix)> {
    let wsw = w.matmul(sp.matrix()).matmul(w).symmetrized();
    let e = sym_eig_tol(&wsw, tol.sym)?;
    let scale = wsw.norm();
    let found = e.eigenvalues.iter().filter(|l| **l > 0.0).count();
    // Full-rank S and positive-definite Sigma exclude zero eigenvalues.
    if found != sp.index() || e.eigenvalues.iter().any(|l| l.abs() < tol.eig * scale) {
        return Err(Error::SignatureMismatch {
            expected: sp.index(),
            found,
        });
    }
    Ok((e.eigenvalues.clone(), w.matmul(&e.eigenvectors)))
}

/// `Q = sum_{l_k > 0} v_k v_k^T`, `R = sum_{l_k < 0} v_k v_k^T`.
///
/// Columns are selected by sign, so any ordering of the pairs gives the
/// same split.
pub fn split_by_sign(v: &Matrix, lambda: &[f64]) -> (Matrix, Matrix) {
    let d = v.rows();
    let mut q = Matrix::zeros(d, d);
    let mut r = Matrix::zeros(d, d);
    for (k, &l) in lambda.iter().enumerate() {
        let col = v.column(k);
        let outer = Matrix::outer(&col, &col);
        if l > 0.0 {
            q = q.add(&outer);
        } else {
            r = r.add(&outer);
        }
    }
    (q.symmetrized(), r.symmetrized())
}

pub fn decompose(sp: &SSpace, sigma: &Matrix, mean: &[f64], tol: &Tolerances) -> Result<GaussianDecomposition> {
    if mean.len() != sp.dim() {
        return Err(Error::DimensionMismatch {
            expected: sp.dim(),
            found: mean.len(),
        });
    }
    let (w, sigma_inv) = check_sigma(sp, sigma, tol)?;
    let (lambda, v) = generalized(sp, &w, tol)?;
    let (q, r) = split_by_sign(&v, &lambda);
    let p = q.matmul(&sigma_inv);
    let s = sp.matrix();
    let centre = 0.5 * sp.sq(mean);
    let primal_value = 0.5 * s.matmul(&q).trace() + centre;
    // For G = {mean + P z}, psi(mean + z) = S(mean, mean) / 2 + S(Pz, z)
    // - S(Pz, Pz) / 2 plus terms linear in z, so with Cov z = Sigma:
    // E psi = S(m, m) / 2 + tr(P^T S Sigma) - tr(P^T S P Sigma) / 2.
    let pt_s = p.transpose().matmul(s);
    let dual_value = pt_s.matmul(sigma).trace() - 0.5 * pt_s.matmul(&p).matmul(sigma).trace() + centre;
    Ok(GaussianDecomposition {
        q,
        r,
        p,
        v,
        lambda,
        mean: mean.to_vec(),
        sigma: sigma.clone(),
        sigma_inv,
        index: sp.index(),
        primal_value,
        dual_value,
    })
}

/// Columns of `V` with their eigenvalues, descending.
pub fn pca_directions(sp: &SSpace, sigma: &Matrix, tol: &Tolerances) -> Result<Vec<(f64, Vec<f64>)>> {
    let (w, _) = check_sigma(sp, sigma, tol)?;
    let (lambda, v) = generalized(sp, &w, tol)?;
    Ok(lambda.iter().enumerate().map(|(k, &l)| (l, v.column(k))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndependentSplit {
    /// Covariance `P Sigma` of `X`.
    pub qx: Matrix,
    /// Covariance `(I - P) Sigma` of `Z = Y - X`.
    pub rz: Matrix,
    /// `|Qx + Rz - Sigma|` (max entry).
    pub sum_residual: f64,
    /// `|P Sigma (I - P)^T|` (max entry).
    pub cross_residual: f64,
}

impl GaussianDecomposition {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + P (y - mean)`.
    pub fn plan_map(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: y.len(),
            });
        }
        let px = self.p.matvec(&sub(y, &self.mean));
        Ok(self.mean.iter().zip(&px).map(|(a, b)| a + b).collect())
    }

    pub fn independent_split(&self) -> IndependentSplit {
        let eye = Matrix::identity(self.dim());
        let imp = eye.sub(&self.p);
        let qx = self.p.matmul(&self.sigma);
        let rz = imp.matmul(&self.sigma);
        IndependentSplit {
            sum_residual: qx.add(&rz).sub(&self.sigma).max_abs(),
            cross_residual: qx.matmul(&imp.transpose()).max_abs(),
            qx,
            rz,
        }
    }

    /// The optimal set `{mean + P (x - mean)}`.
    pub fn optimal_set(&self, sp: &SSpace, tol: &Tolerances) -> Result<MonotoneSet> {
        MonotoneSet::affine(sp, self.mean.clone(), self.p.clone(), tol)
    }

    /// Every invariant of the decomposition, named with its threshold.
    pub fn invariant_checks(&self, sp: &SSpace, tol: &Tolerances) -> Vec<Check> {
        let s = sp.matrix();
        let (q, r, p, sigma, si) = (&self.q, &self.r, &self.p, &self.sigma, &self.sigma_inv);
        let d = self.dim();
        let m = self.index;
        let sig_n = sigma.norm();
        let s_n = s.norm();
        let min_eig = |a: &Matrix| min_eigenvalue(a).unwrap_or(f64::NAN);
        let max_eig = |a: &Matrix| max_eigenvalue(a).unwrap_or(f64::NAN);
        let quad = sig_n * sig_n * s_n;
        let eye = Matrix::identity(d);
        let imp = eye.sub(p);
        let mut out = vec![
            Check::le("Sigma = Q + R", q.add(r).sub(sigma).norm(), tol.eig * sig_n),
            Check::ge("Q psd", min_eig(q), -tol.psd * q.norm()),
            Check::ge("R psd", min_eig(r), -tol.psd * r.norm()),
            Check::le("Q symmetric", q.asymmetry(), tol.psd * sig_n),
            Check::le("R symmetric", r.asymmetry(), tol.psd * sig_n),
            Check::ge("QSQ psd", min_eig(&q.matmul(s).matmul(q)), -tol.psd * quad),
            Check::le("RSR nsd", max_eig(&r.matmul(s).matmul(r)), tol.psd * quad),
            Check::le("QSR = 0", q.matmul(s).matmul(r).norm(), tol.psd * sig_n * s_n),
            Check::le("Q Sigma^-1 Q = Q", q.matmul(si).matmul(q).sub(q).norm(), tol.psd * (1.0 + sig_n)),
            Check::le("R Sigma^-1 R = R", r.matmul(si).matmul(r).sub(r).norm(), tol.psd * (1.0 + sig_n)),
            Check::le("Q Sigma^-1 R = 0", q.matmul(si).matmul(r).norm(), tol.psd * (1.0 + sig_n)),
            Check::count("rank Q = m", rank_tol(q, tol.rank), m),
            Check::count("rank R = d - m", rank_tol(r, tol.rank), d - m),
            Check::le("P Sigma = Q", p.matmul(sigma).sub(q).norm(), tol.psd * (1.0 + sig_n)),
            Check::ge("P Sigma psd", min_eig(&p.matmul(sigma)), -tol.psd * sig_n),
            Check::ge("(I-P) Sigma psd", min_eig(&imp.matmul(sigma)), -tol.psd * sig_n),
        ];
        out.extend(affine_checks(sp, p, tol));
        let half_trace = 0.5 * s.matmul(q).trace() + 0.5 * sp.sq(&self.mean);
        let rel = 1e-8 * self.primal_value.abs().max(1.0);
        out.push(Check::le("primal = tr(SQ)/2", (self.primal_value - half_trace).abs(), rel));
        out.push(Check::le("primal = dual", (self.primal_value - self.dual_value).abs(), rel));
        out
    }
}
