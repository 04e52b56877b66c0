//! Numerics for first-order Coulomb and Riesz gases.
//!
//! N point charges in d dimensions interact through the kernel g(x) = -log|x|
//! (d-dimensional log/Coulomb case s = 0) or |x|^{-s}/s, confined by an external
//! potential V. The crate covers the deterministic side (equilibrium measures,
//! obstacle-problem droplets, thermal equilibria), the energy bookkeeping that
//! controls mean-field limits (modulated energy, splitting identities, transport
//! derivatives), samplers for the associated Gibbs ensembles (Langevin, MALA,
//! exact matrix models), periodic jellium energies on tori, and fluctuation
//! statistics (CLT checks, hyperuniformity diagnostics).

// ndarray-linalg is used without a vendored BLAS backend; the system OpenBLAS
// (which bundles LAPACK) provides the actual zgeev/dsyev implementations.
#[link(name = "openblas")]
extern "C" {}

pub mod dynamics;
pub mod equilibrium;
pub mod jellium;
pub mod kernels;
pub mod modenergy;
pub mod numerics;
pub mod sampler;
pub mod statistics;

pub use kernels::RieszKernel;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameters outside the admissible range (e.g. a Riesz exponent with s >= d).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// An iterative solver ran out of its iteration budget.
    #[error("{what} did not converge: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.3e})")]
    NoConvergence {
        what: &'static str,
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },
    /// A damped fixed-point iteration kept increasing its objective.
    #[error("{what} diverged after {} iterations; residual tail: {:?}", history.len(), &history[history.len().saturating_sub(5)..])]
    Diverged {
        what: &'static str,
        /// Residual after each completed iteration, for post-mortem inspection.
        history: Vec<f64>,
    },
    /// Input data is structurally unusable (wrong length, empty, NaN, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// An external linear-algebra backend failed.
    #[error("linear algebra backend: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, Error>;
