//! Backward martingale transport in pseudo-Euclidean spaces.
//!
//! The crate solves
//!
//! ```text
//! maximize (1/2) E[S(X, Y)]  over martingale couplings (X, Y) with Y ~ nu
//! ```
//!
//! together with its dual, the minimization of `E[psi_G(Y)]` over maximal
//! S-monotone sets `G`, where `psi_G` is the Fitzpatrick function of `G`.
//!
//! * [`linalg`]: Jacobi eigensolver, SPD square roots and a dense simplex LP.
//! * [`space`]: the S-space, its bilinear form and canonical frame.
//! * [`measures`]: discrete measures, martingale plans, convex order.
//! * [`fitzpatrick`]: S-monotone sets, `psi_G`, `phi_G`, projections.
//! * [`gaussian`]: the closed-form linear solution for Gaussian `nu`.
//! * [`solver`]: discrete solvers, certificates and diagnostics.

pub mod checks;
pub mod error;
pub mod fitzpatrick;
pub mod gaussian;
pub mod linalg;
pub mod measures;
mod par;
pub mod solver;
pub mod space;
pub mod tolerance;

pub use error::{Error, Result};
pub use par::Execution;
pub use tolerance::Tolerances;
