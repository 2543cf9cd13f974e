use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{Model, ParamVector, Qoi, StateVector};

/// Forced Van der Pol oscillator
///
/// ```text
/// du1/dt = u2
/// du2/dt = mu1 (1 - u1^2) u2 - u1 + mu2 sin(2 pi t / T + mu3)
/// ```
///
/// With `mu1 < 0` the origin is damped and the forced response is an
/// attracting periodic orbit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcedVanDerPol {
    period: f64,
}

/// `E = int (u1^2 + u2^2) dt` and `J = int u1 sin(2 pi t / T) dt`.
///
/// `J` measures the displacement in phase with a fixed reference signal, so
/// it depends on the forcing phase and does not vanish on periodic orbits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdpQoi {
    period: f64,
}

pub fn make_forced_vdp(period: f64) -> (ForcedVanDerPol, VdpQoi) {
    (ForcedVanDerPol { period }, VdpQoi { period })
}

impl ForcedVanDerPol {
    fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }
}

impl Model for ForcedVanDerPol {
    fn dim(&self) -> usize {
        2
    }

    fn n_params(&self) -> usize {
        3
    }

    fn period(&self) -> f64 {
        self.period
    }

    fn residual(&self, u: &StateVector, mu: &ParamVector, t: f64) -> StateVector {
        let forcing = mu[1] * (self.omega() * t + mu[2]).sin();
        DVector::from_vec(vec![
            u[1],
            mu[0] * (1.0 - u[0] * u[0]) * u[1] - u[0] + forcing,
        ])
    }

    fn jac_u_apply(&self, u: &StateVector, mu: &ParamVector, t: f64, v: &StateVector) -> StateVector {
        self.jac_u_matrix(u, mu, t).unwrap() * v
    }

    fn jac_u_apply_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> StateVector {
        self.jac_u_matrix(u, mu, t).unwrap().tr_mul(w)
    }

    fn jac_mu_apply_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> ParamVector {
        let phase = self.omega() * t + mu[2];
        DVector::from_vec(vec![
            w[1] * (1.0 - u[0] * u[0]) * u[1],
            w[1] * phase.sin(),
            w[1] * mu[1] * phase.cos(),
        ])
    }

    fn jac_u_matrix(&self, u: &StateVector, mu: &ParamVector, _t: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[
                0.0,
                1.0,
                -2.0 * mu[0] * u[0] * u[1] - 1.0,
                mu[0] * (1.0 - u[0] * u[0]),
            ],
        ))
    }

    fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
}

impl Qoi for VdpQoi {
    fn n_qoi(&self) -> usize {
        2
    }

    fn integrand(&self, u: &StateVector, _mu: &ParamVector, t: f64) -> DVector<f64> {
        let s = (2.0 * PI * t / self.period).sin();
        DVector::from_vec(vec![u[0] * u[0] + u[1] * u[1], u[0] * s])
    }

    fn integrand_grad_u_transpose(
        &self,
        u: &StateVector,
        _mu: &ParamVector,
        t: f64,
        w: &DVector<f64>,
    ) -> StateVector {
        let s = (2.0 * PI * t / self.period).sin();
        DVector::from_vec(vec![2.0 * u[0] * w[0] + s * w[1], 2.0 * u[1] * w[0]])
    }

    fn integrand_grad_mu(&self, _u: &StateVector, mu: &ParamVector, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(2, mu.len())
    }

    fn name(&self, q: usize) -> String {
        match q {
            0 => "E".into(),
            1 => "J".into(),
            _ => format!("q{q}"),
        }
    }
}
