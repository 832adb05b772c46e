//! The pseudo-Euclidean S-space: a symmetric full-rank matrix `S` and the
//! bilinear form `S(x, y) = <x, S y>` it induces.

use crate::error::{Error, Result};
use crate::linalg::{dot, sym_eig_tol, EigenResult, Matrix};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct SSpace {
    s: Matrix,
    s_inv: Matrix,
    eigen: EigenResult,
    index: usize,
    near_singular: bool,
}

/// Congruence `S = V^T U V` with `U = diag(+1, .., +1, -1, .., -1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFrame {
    pub v: Matrix,
    pub v_inv: Matrix,
    /// Diagonal of `U`: `m` entries `+1` followed by `d - m` entries `-1`.
    pub signs: Vec<f64>,
}

impl CanonicalFrame {
    pub fn index(&self) -> usize {
        self.signs.iter().filter(|s| **s > 0.0).count()
    }

    pub fn u(&self) -> Matrix {
        Matrix::from_diag(&self.signs)
    }

    /// Canonical coordinates `V x`.
    pub fn to_canonical(&self, x: &[f64]) -> Vec<f64> {
        self.v.matvec(x)
    }

    pub fn from_canonical(&self, w: &[f64]) -> Vec<f64> {
        self.v_inv.matvec(w)
    }

    /// `U(a, b)` for canonical coordinates.
    pub fn canonical_form(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signs
            .iter()
            .zip(a.iter().zip(b))
            .map(|(s, (x, y))| s * x * y)
            .sum()
    }
}

impl SSpace {
    pub fn new(s: Matrix) -> Result<Self> {
        Self::with_tolerances(s, &Tolerances::default())
    }

    pub fn with_tolerances(s: Matrix, tol: &Tolerances) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::DimensionMismatch {
                expected: s.rows(),
                found: s.cols(),
            });
        }
        if !s.is_finite() {
            return Err(Error::InvalidConfig("S must have finite entries".into()));
        }
        let eigen = sym_eig_tol(&s, tol.sym)?;
        let scale = s.norm();
        let min_abs = eigen
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, l| m.min(l.abs()));
        let cutoff = tol.rank * scale;
        if min_abs <= cutoff {
            return Err(Error::SingularS {
                min_abs_eig: min_abs,
            });
        }
        let index = eigen.eigenvalues.iter().filter(|l| **l > 0.0).count();
        let s = s.symmetrized();
        let s_inv = eigen.reassemble(|l| 1.0 / l).symmetrized();
        Ok(Self {
            s,
            s_inv,
            near_singular: min_abs <= 10.0 * cutoff,
            eigen,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    /// Number of positive eigenvalues `m`.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn matrix(&self) -> &Matrix {
        &self.s
    }

    pub fn inverse(&self) -> &Matrix {
        &self.s_inv
    }

    pub fn eigen(&self) -> &EigenResult {
        &self.eigen
    }

    /// Smallest |eigenvalue| lies within ten times the rank cut-off.
    pub fn near_singular(&self) -> bool {
        self.near_singular
    }

    pub fn is_positive_definite(&self) -> bool {
        self.index == self.dim()
    }

    pub fn is_negative_definite(&self) -> bool {
        self.index == 0
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.form(x, y))
    }

    pub fn scalar_square(&self, x: &[f64]) -> Result<f64> {
        self.bilinear(x, x)
    }

    /// Unchecked `S(x, y)`; callers guarantee matching dimensions.
    pub(crate) fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            let xi = x[i];
            if xi != 0.0 {
                acc += xi * dot(self.s.row(i), y);
            }
        }
        acc
    }

    pub(crate) fn sq(&self, x: &[f64]) -> f64 {
        self.form(x, x)
    }

    /// `S x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.s.matvec(x)
    }

    /// Canonical frame from the eigendecomposition `S = W diag(l) W^T`:
    /// `V = diag(sqrt|l|) W^T`, positive eigenvalues first.
    pub fn canonical_frame(&self) -> CanonicalFrame {
        let d = self.dim();
        let w = &self.eigen.eigenvectors;
        let mut v = Matrix::zeros(d, d);
        let mut v_inv = Matrix::zeros(d, d);
        let mut signs = Vec::with_capacity(d);
        for (k, &lam) in self.eigen.eigenvalues.iter().enumerate() {
            let r = lam.abs().sqrt();
            for i in 0..d {
                v[(k, i)] = r * w[(i, k)];
                v_inv[(i, k)] = w[(i, k)] / r;
            }
            signs.push(lam.signum());
        }
        CanonicalFrame { v, v_inv, signs }
    }
}
