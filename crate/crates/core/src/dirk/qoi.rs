use nalgebra::{DMatrix, DVector};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::model::{ParamVector, Qoi};

/// Values of the time-integrated quantities and their partial derivatives
/// with respect to every state and stage of the trajectory.
///
/// Column `q` of `du[n]` is `dF_q/du^(n)` (`n = 0..=N_t`, the last is zero);
/// column `q` of `dk[n - 1][i]` is `dF_q/dk_{i+1}^(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiValue {
    pub values: DVector<f64>,
    pub du: Vec<DMatrix<f64>>,
    pub dk: Vec<Vec<DMatrix<f64>>>,
    /// `n_qoi x N_mu`.
    pub dmu: DMatrix<f64>,
}

impl QoiValue {
    pub fn n_qoi(&self) -> usize {
        self.values.len()
    }
}

/// Quadrature induced by the scheme on its own stages:
///
/// ```text
/// F_q = sum_n dt_n sum_i b_i f_q(u_i^(n), mu, t_{n-1} + c_i dt_n)
/// ```
///
/// Partials follow by the chain rule through
/// `u_i^(n) = u^(n-1) + sum_{j<=i} a_ij k_j^(n)`.
pub fn accumulate_qoi<Q: Qoi + ?Sized>(qoi: &Q, trajectory: &Trajectory, mu: &ParamVector) -> Result<QoiValue> {
    let nq = qoi.n_qoi();
    if nq == 0 {
        return Err(Error::InvalidInput("quantity of interest has no components".into()));
    }
    let dim = trajectory.dim();
    let n_t = trajectory.n_steps();
    let tab = &trajectory.tableau;
    let s = tab.stages();

    let mut values = DVector::zeros(nq);
    let mut du = vec![DMatrix::zeros(dim, nq); n_t + 1];
    let mut dk = vec![vec![DMatrix::zeros(dim, nq); s]; n_t];
    let mut dmu = DMatrix::zeros(nq, mu.len());
    let unit: Vec<DVector<f64>> = (0..nq)
        .map(|q| {
            let mut e = DVector::zeros(nq);
            e[q] = 1.0;
            e
        })
        .collect();

    for n in 1..=n_t {
        let dt = trajectory.grid.dt(n);
        for i in 0..s {
            let w = dt * tab.b(i);
            if w == 0.0 {
                continue;
            }
            let u = trajectory.stage_state(n, i);
            let t = trajectory.stage_time(n, i);
            values.axpy(w, &qoi.integrand(&u, mu, t), 1.0);
            dmu += qoi.integrand_grad_mu(&u, mu, t) * w;
            for (q, e) in unit.iter().enumerate() {
                let g = qoi.integrand_grad_u_transpose(&u, mu, t, e);
                du[n - 1].column_mut(q).axpy(w, &g, 1.0);
                for j in 0..=i {
                    dk[n - 1][j].column_mut(q).axpy(w * tab.a(i, j), &g, 1.0);
                }
            }
        }
    }
    Ok(QoiValue { values, du, dk, dmu })
}
