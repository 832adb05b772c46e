//! Dense two-phase primal simplex with Bland's rule.
//!
//! Solves `min c^T x  s.t.  A x = b, x >= 0`.

use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    /// Equality rows, each of length `objective.len()`.
    pub constraints: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn add_row(&mut self, row: Vec<f64>, rhs: f64) {
        self.constraints.push(row);
        self.rhs.push(rhs);
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.rhs.len() != self.constraints.len() {
            return Err(Error::DimensionMismatch {
                expected: self.constraints.len(),
                found: self.rhs.len(),
            });
        }
        for row in &self.constraints {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
        }
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self.rhs.iter().all(|v| v.is_finite())
            && self.constraints.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("LP data must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpCaps {
    pub max_rows: usize,
    pub max_cols: usize,
    /// Cap on tableau entries, `(rows + 1) * (cols + rows + 1)`.
    pub max_cells: usize,
    pub max_pivots: usize,
}

impl Default for LpCaps {
    fn default() -> Self {
        Self {
            max_rows: 4_000,
            max_cols: 40_000,
            max_cells: 8_000_000,
            max_pivots: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Optimal vertex, or the last feasible vertex when unbounded.
    pub solution: Vec<f64>,
    pub value: f64,
    /// Optimal phase-one objective (sum of artificials).
    pub infeasibility: f64,
    /// Direction `r >= 0` with `A r = 0` and `c^T r < 0` when unbounded.
    pub ray: Option<Vec<f64>>,
    pub pivots: usize,
}

struct Tableau {
    // rows x (cols + 1); last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize, cost: &mut [f64]) {
        let pv = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= pv;
        }
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        let f = cost[c];
        if f != 0.0 {
            for (v, p) in cost.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            cost[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Runs Bland's rule on `cost` (reduced costs, rhs slot holds `-z`),
    /// restricted to columns `< allowed`. Returns the entering column of
    /// an unbounded ray, if any.
    fn optimize(&mut self, cost: &mut [f64], allowed: usize, tol: f64, cap: usize) -> Result<Option<usize>> {
        loop {
            let Some(enter) = (0..allowed).find(|&j| cost[j] < -tol) else {
                return Ok(None);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                let a = row[enter];
                if a > tol {
                    let ratio = row[self.cols] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - tol * (1.0 + lr.abs())
                                || (ratio <= lr + tol * (1.0 + lr.abs())
                                    && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(Some(enter)),
                Some((r, _)) => {
                    if self.pivots >= cap {
                        return Err(Error::CycleGuard { limit: cap });
                    }
                    self.pivot(r, enter, cost);
                }
            }
        }
    }
}

/// Solves the LP with default tolerances and caps.
pub fn lp_solve(p: &LpProblem) -> Result<LpOutcome> {
    lp_solve_with(p, Tolerances::default().lp, LpCaps::default())
}

pub fn lp_solve_with(p: &LpProblem, tol: f64, caps: LpCaps) -> Result<LpOutcome> {
    p.validate()?;
    let n = p.num_vars();
    let m = p.num_rows();
    if m > caps.max_rows {
        return Err(Error::DimensionCap {
            what: "LP rows",
            size: m,
            cap: caps.max_rows,
        });
    }
    if n > caps.max_cols {
        return Err(Error::DimensionCap {
            what: "LP columns",
            size: n,
            cap: caps.max_cols,
        });
    }
    let cells = (m + 1) * (n + m + 1);
    if cells > caps.max_cells {
        return Err(Error::DimensionCap {
            what: "LP tableau cells",
            size: cells,
            cap: caps.max_cells,
        });
    }

    // Phase one: artificials n..n+m, rows flipped so that b >= 0.
    let cols = n + m;
    let mut t = Vec::with_capacity(m);
    for (i, (row, &b)) in p.constraints.iter().zip(&p.rhs).enumerate() {
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let mut r = vec![0.0; cols + 1];
        for (j, a) in row.iter().enumerate() {
            r[j] = sign * a;
        }
        r[n + i] = 1.0;
        r[cols] = sign * b;
        t.push(r);
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
        cols,
        pivots: 0,
    };
    let mut cost1 = vec![0.0; cols + 1];
    for j in n..cols {
        cost1[j] = 1.0;
    }
    for row in &tab.t {
        for (c, v) in cost1.iter_mut().zip(row) {
            *c -= v;
        }
    }
    for j in n..cols {
        cost1[j] = 0.0;
    }
    tab.optimize(&mut cost1, cols, tol, caps.max_pivots)?;
    let infeasibility = -cost1[cols];
    let bscale = 1.0 + p.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if infeasibility > tol * bscale {
        return Ok(LpOutcome {
            status: LpStatus::Infeasible,
            solution: vec![0.0; n],
            value: f64::NAN,
            infeasibility,
            ray: None,
            pivots: tab.pivots,
        });
    }

    // Drive artificials out of the basis; drop redundant rows.
    let mut r = 0;
    while r < tab.t.len() {
        if tab.basis[r] >= n {
            let col = (0..n).find(|&j| tab.t[r][j].abs() > tol);
            match col {
                Some(j) => {
                    let mut dummy = vec![0.0; cols + 1];
                    tab.pivot(r, j, &mut dummy);
                }
                None => {
                    tab.t.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    // Phase two on the original columns only.
    let mut cost2 = vec![0.0; cols + 1];
    cost2[..n].copy_from_slice(&p.objective);
    for (i, row) in tab.t.iter().enumerate() {
        let cb = p.objective[tab.basis[i]];
        if cb != 0.0 {
            for (c, v) in cost2.iter_mut().zip(row) {
                *c -= cb * v;
            }
        }
    }
    let unbounded = tab.optimize(&mut cost2, n, tol, caps.max_pivots)?;

    let mut solution = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            solution[b] = tab.t[i][cols].max(0.0);
        }
    }
    let value = p
        .objective
        .iter()
        .zip(&solution)
        .map(|(c, x)| c * x)
        .sum();
    let (status, ray) = match unbounded {
        None => (LpStatus::Optimal, None),
        Some(enter) => {
            let mut d = vec![0.0; n];
            d[enter] = 1.0;
            for (i, &b) in tab.basis.iter().enumerate() {
                if b < n {
                    d[b] = -tab.t[i][enter];
                }
            }
            (LpStatus::Unbounded, Some(d))
        }
    };
    Ok(LpOutcome {
        status,
        solution,
        value,
        infeasibility,
        ray,
        pivots: tab.pivots,
    })
}
