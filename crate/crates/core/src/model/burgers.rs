use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{Model, ParamVector, Qoi, StateVector};
use crate::error::{Error, Result};

/// Viscous Burgers equation on the periodic unit interval, finite
/// differences in conservative form, driven by a moving source:
///
/// ```text
/// M du_j/dt = -(F_{j+1/2} - F_{j-1/2}) / h + nu (u_{j+1} - 2u_j + u_{j-1}) / h^2
///             - sigma(x_j) u_j + s_j(t; mu)
/// F_{j+1/2} = (u_j^2 + u_{j+1}^2) / 4
/// s_j = mu1 exp((cos(2 pi (x_j - x_s(t))) - 1) / mu3^2),  x_s(t) = 1/2 + mu2 sin(2 pi t / T)
/// ```
///
/// `sigma(x) = sigma0 (1 + cos(2 pi x) / 2)` is a linear drag; it is zero
/// unless set with [`Burgers1d::with_damping`]. Without drag the spatial
/// mean is conserved and the periodic problem is singular.
#[derive(Debug, Clone)]
pub struct Burgers1d {
    n: usize,
    h: f64,
    viscosity: f64,
    damping: f64,
    period: f64,
    mass: Option<CyclicMass>,
    dense: bool,
}

/// Spatial integrals of `u` and `u^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurgersQoi {
    h: f64,
}

pub fn make_burgers_1d(n_cells: usize, viscosity: f64, period: f64) -> Result<(Burgers1d, BurgersQoi)> {
    if n_cells < 16 {
        return Err(Error::InvalidInput(format!("n_cells must be >= 16, got {n_cells}")));
    }
    if !(viscosity > 0.0) {
        return Err(Error::InvalidInput(format!("viscosity must be positive, got {viscosity}")));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidInput(format!("period must be positive, got {period}")));
    }
    let h = 1.0 / n_cells as f64;
    Ok((
        Burgers1d {
            n: n_cells,
            h,
            viscosity,
            damping: 0.0,
            period,
            mass: None,
            dense: false,
        },
        BurgersQoi { h },
    ))
}

impl Burgers1d {
    pub fn with_damping(mut self, sigma0: f64) -> Self {
        self.damping = sigma0;
        self
    }

    /// Linear-element mass matrix `(1/6) [1 4 1]` (periodic).
    pub fn with_consistent_mass(mut self) -> Self {
        self.mass = Some(CyclicMass::new(self.n, 4.0 / 6.0, 1.0 / 6.0));
        self
    }

    /// Expose the dense Jacobian so stage solves use LU instead of GMRES.
    pub fn with_dense_jacobian(mut self) -> Self {
        self.dense = true;
        self
    }

    pub fn cell_centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| j as f64 * self.h)
    }

    fn sigma(&self, j: usize) -> f64 {
        self.damping * (1.0 + 0.5 * (2.0 * PI * j as f64 * self.h).cos())
    }

    fn source_center(&self, mu: &ParamVector, t: f64) -> f64 {
        0.5 + mu[1] * (2.0 * PI * t / self.period).sin()
    }

    /// Source value and `(ds/dmu1, ds/dmu2, ds/dmu3)` at cell `j`.
    fn source(&self, j: usize, mu: &ParamVector, t: f64) -> (f64, [f64; 3]) {
        let (amp, width) = (mu[0], mu[2]);
        let theta = 2.0 * PI * (j as f64 * self.h - self.source_center(mu, t));
        let w2 = width * width;
        let bump = ((theta.cos() - 1.0) / w2).exp();
        let s = amp * bump;
        let dtheta_dmu2 = -2.0 * PI * (2.0 * PI * t / self.period).sin();
        (
            s,
            [
                bump,
                s * (-theta.sin() / w2) * dtheta_dmu2,
                s * (theta.cos() - 1.0) * (-2.0 / (w2 * width)),
            ],
        )
    }

    fn left(&self, j: usize) -> usize {
        (j + self.n - 1) % self.n
    }

    fn right(&self, j: usize) -> usize {
        (j + 1) % self.n
    }
}

impl Model for Burgers1d {
    fn dim(&self) -> usize {
        self.n
    }

    fn n_params(&self) -> usize {
        3
    }

    fn period(&self) -> f64 {
        self.period
    }

    fn residual(&self, u: &StateVector, mu: &ParamVector, t: f64) -> StateVector {
        let (h, nu) = (self.h, self.viscosity);
        DVector::from_fn(self.n, |j, _| {
            let (l, r) = (self.left(j), self.right(j));
            let flux_r = 0.25 * (u[j] * u[j] + u[r] * u[r]);
            let flux_l = 0.25 * (u[l] * u[l] + u[j] * u[j]);
            -(flux_r - flux_l) / h + nu * (u[r] - 2.0 * u[j] + u[l]) / (h * h) - self.sigma(j) * u[j]
                + self.source(j, mu, t).0
        })
    }

    fn jac_u_apply(&self, u: &StateVector, _mu: &ParamVector, _t: f64, v: &StateVector) -> StateVector {
        let (h, nu) = (self.h, self.viscosity);
        DVector::from_fn(self.n, |j, _| {
            let (l, r) = (self.left(j), self.right(j));
            -(u[r] * v[r] - u[l] * v[l]) / (2.0 * h) + nu * (v[r] - 2.0 * v[j] + v[l]) / (h * h)
                - self.sigma(j) * v[j]
        })
    }

    fn jac_u_apply_transpose(
        &self,
        u: &StateVector,
        _mu: &ParamVector,
        _t: f64,
        w: &StateVector,
    ) -> StateVector {
        let (h, nu) = (self.h, self.viscosity);
        DVector::from_fn(self.n, |k, _| {
            let (l, r) = (self.left(k), self.right(k));
            u[k] * (w[r] - w[l]) / (2.0 * h) + nu * (w[r] - 2.0 * w[k] + w[l]) / (h * h)
                - self.sigma(k) * w[k]
        })
    }

    fn jac_mu_apply_transpose(
        &self,
        _u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> ParamVector {
        let mut out = DVector::zeros(3);
        for j in 0..self.n {
            let (_, ds) = self.source(j, mu, t);
            for p in 0..3 {
                out[p] += ds[p] * w[j];
            }
        }
        out
    }

    fn mass_apply(&self, v: &StateVector) -> StateVector {
        match &self.mass {
            None => v.clone(),
            Some(m) => m.apply(v),
        }
    }

    fn mass_solve(&self, b: &StateVector) -> StateVector {
        match &self.mass {
            None => b.clone(),
            Some(m) => m.solve(b),
        }
    }

    fn jac_u_matrix(&self, u: &StateVector, _mu: &ParamVector, _t: f64) -> Option<DMatrix<f64>> {
        if !self.dense {
            return None;
        }
        let (h, nu) = (self.h, self.viscosity);
        let mut jac = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            let (l, r) = (self.left(j), self.right(j));
            jac[(j, j)] += -2.0 * nu / (h * h) - self.sigma(j);
            jac[(j, r)] += -u[r] / (2.0 * h) + nu / (h * h);
            jac[(j, l)] += u[l] / (2.0 * h) + nu / (h * h);
        }
        Some(jac)
    }
}

impl Qoi for BurgersQoi {
    fn n_qoi(&self) -> usize {
        2
    }

    fn integrand(&self, u: &StateVector, _mu: &ParamVector, _t: f64) -> DVector<f64> {
        DVector::from_vec(vec![self.h * u.sum(), self.h * u.norm_squared()])
    }

    fn integrand_grad_u_transpose(
        &self,
        u: &StateVector,
        _mu: &ParamVector,
        _t: f64,
        w: &DVector<f64>,
    ) -> StateVector {
        u.map(|x| self.h * (w[0] + 2.0 * w[1] * x))
    }

    fn integrand_grad_mu(&self, _u: &StateVector, mu: &ParamVector, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(2, mu.len())
    }

    fn name(&self, q: usize) -> String {
        match q {
            0 => "int_u".into(),
            1 => "int_u2".into(),
            _ => format!("q{q}"),
        }
    }
}

/// Symmetric periodic tridiagonal matrix with constant diagonal `d` and
/// off-diagonal `o`, solved by the Sherman-Morrison variant of the Thomas
/// algorithm.
#[derive(Debug, Clone)]
struct CyclicMass {
    n: usize,
    diag: f64,
    off: f64,
    gamma: f64,
    z: Vec<f64>,
}

impl CyclicMass {
    fn new(n: usize, diag: f64, off: f64) -> Self {
        let gamma = -diag;
        let mut rhs = vec![0.0; n];
        rhs[0] = gamma;
        rhs[n - 1] = off;
        let mut m = Self {
            n,
            diag,
            off,
            gamma,
            z: Vec::new(),
        };
        m.z = m.thomas(&rhs);
        m
    }

    fn apply(&self, v: &StateVector) -> StateVector {
        let n = self.n;
        DVector::from_fn(n, |j, _| {
            self.diag * v[j] + self.off * (v[(j + n - 1) % n] + v[(j + 1) % n])
        })
    }

    /// Tridiagonal solve with the corner-corrected diagonal.
    fn thomas(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut bb = vec![self.diag; n];
        bb[0] = self.diag - self.gamma;
        bb[n - 1] = self.diag - self.off * self.off / self.gamma;
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        c[0] = self.off / bb[0];
        x[0] = rhs[0] / bb[0];
        for i in 1..n {
            let denom = bb[i] - self.off * c[i - 1];
            c[i] = self.off / denom;
            x[i] = (rhs[i] - self.off * x[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }

    fn solve(&self, b: &StateVector) -> StateVector {
        let n = self.n;
        let x = self.thomas(b.as_slice());
        let z = &self.z;
        let fact = (x[0] + self.off * x[n - 1] / self.gamma) / (1.0 + z[0] + self.off * z[n - 1] / self.gamma);
        DVector::from_fn(n, |i, _| x[i] - fact * z[i])
    }
}
