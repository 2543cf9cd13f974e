//! Time-periodic solutions of parametrized evolution equations discretized
//! with diagonally implicit Runge-Kutta schemes, their periodic adjoints, and
//! gradients of time-integrated quantities of interest taken along the
//! manifold of periodic solutions.
//!
//! The building blocks, bottom up:
//!
//! - [`model`]: the `M du/dt = r(u, mu, t)` interface and built-in models
//! - [`dirk`]: tableaux, one-period evolution, solver-consistent quadrature
//! - [`sensitivity`]: forward sensitivities and backward adjoint sweeps
//! - [`krylov`]: matrix-free GMRES and Arnoldi
//! - [`shooting`]: periodic primal solvers and the periodic dual solve
//! - [`gradient`]: manifold gradients, finite-difference checks, dense oracle
//! - [`floquet`]: monodromy spectrum and orbit stability
//! - [`driver`]: bound- and equality-constrained optimization over `mu`

pub mod dirk;
pub mod driver;
pub mod error;
pub mod floquet;
pub mod gradient;
pub mod io;
pub mod krylov;
mod lbfgs;
pub mod model;
pub mod sensitivity;
pub mod shooting;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
