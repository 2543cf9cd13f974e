//! Parametrized semi-discrete systems `M du/dt = r(u, mu, t)` and the
//! time-integrated quantities of interest evaluated along them.
//!
//! Models are exposed through actions only (residual, Jacobian products,
//! mass apply/solve). Small models may additionally return dense Jacobians,
//! which the integrator uses for direct stage solves.

use nalgebra::{DMatrix, DVector};

mod burgers;
mod linear;
mod vdp;

pub use burgers::{make_burgers_1d, Burgers1d, BurgersQoi};
pub use linear::{make_linear_periodic, Basis, ForcingTerm, LinearPeriodic, QuadraticQoi};
pub use vdp::{make_forced_vdp, ForcedVanDerPol, VdpQoi};

/// State vector `u` of length `N_u`.
pub type StateVector = DVector<f64>;
/// Parameter vector `mu` of length `N_mu`.
pub type ParamVector = DVector<f64>;

/// A parametrized semi-discrete evolution equation `M du/dt = r(u, mu, t)`.
///
/// All callbacks must be pure; models are shared across worker threads.
pub trait Model: Send + Sync {
    /// State dimension `N_u`.
    fn dim(&self) -> usize;

    /// Parameter dimension `N_mu`.
    fn n_params(&self) -> usize;

    /// Forcing period `T`.
    fn period(&self) -> f64;

    fn residual(&self, u: &StateVector, mu: &ParamVector, t: f64) -> StateVector;

    /// `(dr/du) v`
    fn jac_u_apply(&self, u: &StateVector, mu: &ParamVector, t: f64, v: &StateVector) -> StateVector;

    /// `(dr/du)^T w`
    fn jac_u_apply_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> StateVector;

    /// `(dr/dmu)^T w`, a vector of length `N_mu`.
    fn jac_mu_apply_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> ParamVector;

    fn mass_apply(&self, v: &StateVector) -> StateVector {
        v.clone()
    }

    fn mass_solve(&self, b: &StateVector) -> StateVector {
        b.clone()
    }

    fn mass_apply_transpose(&self, v: &StateVector) -> StateVector {
        self.mass_apply(v)
    }

    fn mass_solve_transpose(&self, b: &StateVector) -> StateVector {
        self.mass_solve(b)
    }

    /// Dense `dr/du`, when the model is small enough to assemble it.
    fn jac_u_matrix(&self, _u: &StateVector, _mu: &ParamVector, _t: f64) -> Option<DMatrix<f64>> {
        None
    }

    /// Dense mass matrix. Defaults to assembling it column by column.
    fn mass_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            m.set_column(j, &self.mass_apply(&e));
        }
        m
    }
}

/// Integrand `f_h(u, mu, t)` of a vector of time-integrated quantities of
/// interest, with its partial derivatives.
pub trait Qoi: Send + Sync {
    fn n_qoi(&self) -> usize;

    /// Integrand values, one per quantity.
    fn integrand(&self, u: &StateVector, mu: &ParamVector, t: f64) -> DVector<f64>;

    /// `(df/du)^T w` for a weight vector `w` of length `n_qoi`.
    fn integrand_grad_u_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &DVector<f64>,
    ) -> StateVector;

    /// `df/dmu` as an `n_qoi x N_mu` matrix.
    fn integrand_grad_mu(&self, u: &StateVector, mu: &ParamVector, t: f64) -> DMatrix<f64>;

    /// Short label for quantity `q`, used in reports.
    fn name(&self, q: usize) -> String {
        format!("q{q}")
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn n_params(&self) -> usize {
        (**self).n_params()
    }
    fn period(&self) -> f64 {
        (**self).period()
    }
    fn residual(&self, u: &StateVector, mu: &ParamVector, t: f64) -> StateVector {
        (**self).residual(u, mu, t)
    }
    fn jac_u_apply(&self, u: &StateVector, mu: &ParamVector, t: f64, v: &StateVector) -> StateVector {
        (**self).jac_u_apply(u, mu, t, v)
    }
    fn jac_u_apply_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> StateVector {
        (**self).jac_u_apply_transpose(u, mu, t, w)
    }
    fn jac_mu_apply_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> ParamVector {
        (**self).jac_mu_apply_transpose(u, mu, t, w)
    }
    fn mass_apply(&self, v: &StateVector) -> StateVector {
        (**self).mass_apply(v)
    }
    fn mass_solve(&self, b: &StateVector) -> StateVector {
        (**self).mass_solve(b)
    }
    fn mass_apply_transpose(&self, v: &StateVector) -> StateVector {
        (**self).mass_apply_transpose(v)
    }
    fn mass_solve_transpose(&self, b: &StateVector) -> StateVector {
        (**self).mass_solve_transpose(b)
    }
    fn jac_u_matrix(&self, u: &StateVector, mu: &ParamVector, t: f64) -> Option<DMatrix<f64>> {
        (**self).jac_u_matrix(u, mu, t)
    }
    fn mass_matrix(&self) -> DMatrix<f64> {
        (**self).mass_matrix()
    }
}

/// Hides the dense Jacobian of the wrapped model so every solve goes
/// through the matrix-free Krylov path.
#[derive(Debug, Clone)]
pub struct MatrixFree<M>(pub M);

impl<M: Model> Model for MatrixFree<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn n_params(&self) -> usize {
        self.0.n_params()
    }
    fn period(&self) -> f64 {
        self.0.period()
    }
    fn residual(&self, u: &StateVector, mu: &ParamVector, t: f64) -> StateVector {
        self.0.residual(u, mu, t)
    }
    fn jac_u_apply(&self, u: &StateVector, mu: &ParamVector, t: f64, v: &StateVector) -> StateVector {
        self.0.jac_u_apply(u, mu, t, v)
    }
    fn jac_u_apply_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> StateVector {
        self.0.jac_u_apply_transpose(u, mu, t, w)
    }
    fn jac_mu_apply_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> ParamVector {
        self.0.jac_mu_apply_transpose(u, mu, t, w)
    }
    fn mass_apply(&self, v: &StateVector) -> StateVector {
        self.0.mass_apply(v)
    }
    fn mass_solve(&self, b: &StateVector) -> StateVector {
        self.0.mass_solve(b)
    }
    fn mass_apply_transpose(&self, v: &StateVector) -> StateVector {
        self.0.mass_apply_transpose(v)
    }
    fn mass_solve_transpose(&self, b: &StateVector) -> StateVector {
        self.0.mass_solve_transpose(b)
    }
}

/// Central-difference check of a directional derivative: returns
/// `||(g(x + eps v) - g(x - eps v)) / (2 eps) - d||`.
pub fn central_difference_error<G>(g: G, x: &DVector<f64>, v: &DVector<f64>, d: &DVector<f64>, eps: f64) -> f64
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let fd = (g(&(x + v * eps)) - g(&(x - v * eps))) / (2.0 * eps);
    (fd - d).norm()
}
