//! Centralized numerical tolerances.
//!
//! Every check in the crate reads its threshold from a [`Tolerances`]
//! value so that reports can echo the exact set used and the CLI can
//! override individual entries by name.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative symmetry check, scaled by the matrix norm.
    pub sym: f64,
    /// Relative eigen-reconstruction accuracy.
    pub eig: f64,
    /// Positive-definiteness floor for the smallest eigenvalue (relative).
    pub pd: f64,
    /// Primal feasibility and pivot tolerance in the simplex method.
    pub lp: f64,
    /// Relative rank cut-off.
    pub rank: f64,
    /// Semi-definiteness slack for matrix inequalities.
    pub psd: f64,
    /// Projection tolerance, scaled by `1 + |y|^2`.
    pub proj: f64,
    /// Support check `psi(y) = S(x,y) - S(x,x)/2`, scaled by `1 + |y|^2`.
    pub support: f64,
    /// Relative duality gap accepted as "closed".
    pub gap: f64,
    /// Weak duality slack, scaled by `1 + |dual|`.
    pub weak: f64,
    /// Marginal and barycenter feasibility of plans.
    pub martingale: f64,
    /// Tie detection in the reassignment step.
    pub tie: f64,
    /// Pairwise monotonicity slack, scaled by `1 + |x-y|^2`.
    pub monotone: f64,
    /// Atoms closer than this are merged.
    pub merge: f64,
    /// Clusters lighter than this are dropped.
    pub dust: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sym: 1e-10,
            eig: 1e-10,
            pd: 1e-12,
            lp: 1e-9,
            rank: 1e-8,
            psd: 1e-9,
            proj: 1e-8,
            support: 1e-8,
            gap: 1e-6,
            weak: 1e-8,
            martingale: 1e-10,
            tie: 1e-9,
            monotone: 1e-10,
            merge: 1e-12,
            dust: 1e-12,
        }
    }
}

impl Tolerances {
    pub const NAMES: [&'static str; 15] = [
        "sym",
        "eig",
        "pd",
        "lp",
        "rank",
        "psd",
        "proj",
        "support",
        "gap",
        "weak",
        "martingale",
        "tie",
        "monotone",
        "merge",
        "dust",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "sym" => &mut self.sym,
            "eig" => &mut self.eig,
            "pd" => &mut self.pd,
            "lp" => &mut self.lp,
            "rank" => &mut self.rank,
            "psd" => &mut self.psd,
            "proj" => &mut self.proj,
            "support" => &mut self.support,
            "gap" => &mut self.gap,
            "weak" => &mut self.weak,
            "martingale" => &mut self.martingale,
            "tie" => &mut self.tie,
            "monotone" => &mut self.monotone,
            "merge" => &mut self.merge,
            "dust" => &mut self.dust,
            _ => return None,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let mut copy = *self;
        copy.slot(name).map(|v| *v)
    }

    /// Overrides a single tolerance by name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance {name} must be finite and positive, got {value}"
            )));
        }
        match self.slot(name) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(Error::InvalidConfig(format!("unknown tolerance {name:?}"))),
        }
    }

    /// Name/value pairs in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        Self::NAMES
            .iter()
            .map(|n| (*n, self.get(n).expect("known name")))
            .collect()
    }
}
