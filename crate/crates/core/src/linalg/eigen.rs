use std::cmp::Ordering;

use super::Matrix;
use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

/// Largest dimension accepted by the Jacobi eigensolver.
pub const MAX_EIG_DIM: usize = 64;

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl EigenResult {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.column(k)
    }

    /// `W * diag(f(lambda)) * W^T`.
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let w = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let s = f(lam);
            if s == 0.0 {
                continue;
            }
            for i in 0..n {
                let wik = w[(i, k)] * s;
                for j in 0..n {
                    out[(i, j)] += wik * w[(j, k)];
                }
            }
        }
        out
    }
}

/// Full spectral decomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eig(a: &Matrix) -> Result<EigenResult> {
    sym_eig_tol(a, Tolerances::default().sym)
}

pub fn sym_eig_tol(a: &Matrix, sym_tol: f64) -> Result<EigenResult> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            found: a.cols(),
        });
    }
    let n = a.rows();
    if n > MAX_EIG_DIM {
        return Err(Error::DimensionCap {
            what: "eigen dimension",
            size: n,
            cap: MAX_EIG_DIM,
        });
    }
    let scale = a.norm();
    let asym = a.asymmetry();
    if asym > sym_tol * scale {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            allowed: sym_tol * scale,
        });
    }

    let mut m = a.symmetrized();
    let mut v = Matrix::identity(n);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps: MAX_SWEEPS,
        });
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let mut col = v.column(k);
            normalize_sign(&mut col);
            (m[(k, k)], col)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    // Within runs of (numerically) equal eigenvalues, order vectors
    // lexicographically, largest first.
    let tie = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (pairs[end - 1].0 - pairs[end].0).abs() <= tie {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lex_desc(&a.1, &b.1));
        start = end;
    }

    let eigenvalues = pairs.iter().map(|p| p.0).collect();
    let columns: Vec<Vec<f64>> = pairs.into_iter().map(|p| p.1).collect();
    Ok(EigenResult {
        eigenvalues,
        eigenvectors: Matrix::from_columns(&columns)?,
    })
}

fn normalize_sign(v: &mut [f64]) {
    let big = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * big) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn lex_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-12 {
            return y.partial_cmp(x).unwrap_or(Ordering::Equal);
        }
    }
    Ordering::Equal
}

/// Symmetric square root of a symmetric positive-definite matrix.
pub fn spd_sqrt(a: &Matrix) -> Result<Matrix> {
    let tol = Tolerances::default();
    let e = sym_eig_tol(a, tol.sym)?;
    check_pd(&e, a.norm(), tol.pd, "matrix")?;
    Ok(e.reassemble(f64::sqrt).symmetrized())
}

/// Inverse of a symmetric full-rank matrix through its eigendecomposition.
pub fn sym_inverse(a: &Matrix) -> Result<Matrix> {
    let e = sym_eig(a)?;
    let scale = a.norm();
    let min_abs = e
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, l| m.min(l.abs()));
    if min_abs <= Tolerances::default().rank * scale {
        return Err(Error::SingularS {
            min_abs_eig: min_abs,
        });
    }
    Ok(e.reassemble(|l| 1.0 / l).symmetrized())
}

pub(crate) fn check_pd(e: &EigenResult, scale: f64, pd_tol: f64, what: &'static str) -> Result<()> {
    let min = *e.eigenvalues.last().expect("non-empty");
    if min <= pd_tol * scale {
        return Err(Error::NotPositiveDefinite {
            what,
            min_eig: min,
            hint: "",
        });
    }
    Ok(())
}

/// Number of singular values exceeding `tau` times the largest one.
///
/// Symmetric inputs use `|eigenvalues|`; others the eigenvalues of `A^T A`.
pub fn rank_tol(a: &Matrix, tau: f64) -> usize {
    let singular: Vec<f64> = if a.is_square() && a.asymmetry() <= 1e-12 * a.norm() {
        match sym_eig(a) {
            Ok(e) => e.eigenvalues.iter().map(|l| l.abs()).collect(),
            Err(_) => return 0,
        }
    } else {
        match sym_eig(&a.transpose().matmul(a)) {
            Ok(e) => e.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect(),
            Err(_) => return 0,
        }
    };
    let top = singular.iter().fold(0.0f64, |m, s| m.max(*s));
    if top == 0.0 {
        return 0;
    }
    singular.iter().filter(|s| **s > tau * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_symmetric(n: usize, entries: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        let mut it = entries.iter().cycle();
        for i in 0..n {
            for j in i..n {
                let v = *it.next().unwrap();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn diagonal_input() {
        let e = sym_eig(&Matrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors, Matrix::identity(2));
    }

    #[test]
    fn swap_matrix() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] + 1.0).abs() < 1e-14);
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        assert!((v0[0] - r).abs() < 1e-14 && (v0[1] - r).abs() < 1e-14);
        assert!((v1[0] - r).abs() < 1e-14 && (v1[1] + r).abs() < 1e-14);
    }

    #[test]
    fn identity_four() {
        let e = sym_eig(&Matrix::identity(4)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0; 4]);
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn spd_sqrt_examples() {
        assert_eq!(spd_sqrt(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let b = spd_sqrt(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(b.sub(&Matrix::from_diag(&[2.0, 3.0])).max_abs() < 1e-14);
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let b = spd_sqrt(&a).unwrap();
        assert!(b.matmul(&b).sub(&a).norm() < 1e-12);
        assert!(b.asymmetry() == 0.0);
        let indefinite = Matrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(
            spd_sqrt(&indefinite),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_tol(&Matrix::zeros(3, 3), 1e-8), 0);
        assert_eq!(rank_tol(&Matrix::identity(3), 1e-8), 3);
        assert_eq!(rank_tol(&Matrix::outer(&[1.0, 1.0], &[1.0, 1.0]), 1e-8), 1);
        let wide = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]).unwrap();
        assert_eq!(rank_tol(&wide, 1e-8), 1);
    }

    proptest! {
        #[test]
        fn eig_round_trip(n in 1usize..=8, entries in prop::collection::vec(-5.0f64..5.0, 36)) {
            let a = random_symmetric(n, &entries);
            let e = sym_eig(&a).unwrap();
            let recon = e.reassemble(|l| l);
            let scale = a.norm().max(f64::MIN_POSITIVE);
            prop_assert!(recon.sub(&a).norm() <= 1e-10 * scale.max(1e-300) + 1e-300);
            let vtv = e.eigenvectors.transpose().matmul(&e.eigenvectors);
            prop_assert!(vtv.sub(&Matrix::identity(n)).norm() <= 1e-10);
            for w in e.eigenvalues.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn spd_sqrt_squares_back(n in 1usize..=6, entries in prop::collection::vec(-2.0f64..2.0, 36)) {
            // B^T B + I is safely positive definite.
            let b = Matrix::new(n, n, entries[..n * n].to_vec()).unwrap();
            let a = b.transpose().matmul(&b).add(&Matrix::identity(n));
            let r = spd_sqrt(&a).unwrap();
            prop_assert!(r.matmul(&r).sub(&a).norm() <= 1e-9 * a.norm());
        }
    }
}
