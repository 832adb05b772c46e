use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e} exceeds {allowed:.3e})")]
    NotSymmetric { asymmetry: f64, allowed: f64 },
    #[error("eigen iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("{what} must be positive definite (smallest eigenvalue {min_eig:.3e}){hint}")]
    NotPositiveDefinite {
        what: &'static str,
        min_eig: f64,
        hint: &'static str,
    },
    #[error("S must have full rank (smallest |eigenvalue| {min_abs_eig:.3e})")]
    SingularS { min_abs_eig: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("problem size {size} exceeds the cap {cap} ({what})")]
    DimensionCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },
    #[error("simplex pivot limit {limit} exceeded")]
    CycleGuard { limit: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("martingale identity violated: {lhs} vs {rhs}")]
    MartingaleViolated { lhs: f64, rhs: f64 },
    #[error("plan y-marginal differs from nu by {deviation:.3e}")]
    MarginalMismatch { deviation: f64 },
    #[error("Fitzpatrick function is +inf at the probe point")]
    UnboundedBelow,
    #[error("projection not attained on the set representation")]
    EmptyProjection,
    #[error("codomain dimension {codomain} > 1 is not supported")]
    CodomainTooLarge { codomain: usize },
    #[error("points are not S-monotone (pair {i}, {j}: scalar square {value:.3e})")]
    NotMonotone { i: usize, j: usize, value: f64 },
    #[error("invalid monotone set: {0}")]
    InvalidSet(String),
    #[error("point is not interior to the domain of psi")]
    BoundaryPoint,
    #[error("signature mismatch: expected {expected} positive eigenvalues, found {found}")]
    SignatureMismatch { expected: usize, found: usize },
    #[error("{atoms} atoms exceed the exact enumeration cap {cap}")]
    AtomCapExceeded { atoms: usize, cap: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures of numerical routines rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::CycleGuard { .. } | Error::SignatureMismatch { .. }
        )
    }
}
