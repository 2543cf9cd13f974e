//! Diagonally implicit Runge-Kutta integration over one period, and the
//! quadrature of quantities of interest induced by the same scheme.

use std::cell::OnceCell;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::krylov::{gmres, FnOperator, GmresOptions};
use crate::model::{Model, ParamVector, StateVector};

mod grid;
mod qoi;
mod tableau;
mod trajectory;

pub use grid::TimeGrid;
pub use qoi::{accumulate_qoi, QoiValue};
pub use tableau::{tableau_library, ButcherTableau};
pub use trajectory::Trajectory;
pub(crate) use trajectory::{write_records_binary, write_records_csv};

/// Newton iterations allowed per stage.
pub const MAX_STAGE_NEWTON: usize = 30;

/// Stage Newton solver for one `(model, tableau, mu)` combination.
///
/// Stage `i` solves `M k_i - dt r(u_i, mu, t_prev + c_i dt) = 0` for `k_i` with
/// `u_i = u_prev + sum_{j<=i} a_ij k_j`, starting from `k_i = 0`. Newton
/// corrections use LU on `M - dt a_ii dr/du` when the model supplies a dense
/// Jacobian and GMRES otherwise.
pub(crate) struct Integrator<'a, M: Model + ?Sized> {
    model: &'a M,
    tableau: &'a ButcherTableau,
    mu: &'a ParamVector,
    tol: f64,
    mass: OnceCell<DMatrix<f64>>,
}

impl<'a, M: Model + ?Sized> Integrator<'a, M> {
    pub(crate) fn new(model: &'a M, tableau: &'a ButcherTableau, mu: &'a ParamVector, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidInput(format!("stage tolerance must be positive, got {tol}")));
        }
        if mu.len() != model.n_params() {
            return Err(Error::InvalidInput(format!(
                "parameter vector has length {}, model expects {}",
                mu.len(),
                model.n_params()
            )));
        }
        Ok(Self {
            model,
            tableau,
            mu,
            tol,
            mass: OnceCell::new(),
        })
    }

    fn mass_dense(&self) -> &DMatrix<f64> {
        self.mass.get_or_init(|| self.model.mass_matrix())
    }

    pub(crate) fn step(&self, u_prev: &StateVector, t_prev: f64, dt: f64) -> Result<(StateVector, Vec<StateVector>)> {
        let s = self.tableau.stages();
        let mut stages: Vec<StateVector> = Vec::with_capacity(s);
        for i in 0..s {
            let mut base = u_prev.clone();
            for (j, k) in stages.iter().enumerate() {
                base.axpy(self.tableau.a(i, j), k, 1.0);
            }
            let k = self.solve_stage(i, &base, t_prev + self.tableau.c(i) * dt, dt)?;
            stages.push(k);
        }
        let mut u_next = u_prev.clone();
        for (i, k) in stages.iter().enumerate() {
            u_next.axpy(self.tableau.b(i), k, 1.0);
        }
        Ok((u_next, stages))
    }

    fn solve_stage(&self, i: usize, base: &StateVector, t: f64, dt: f64) -> Result<StateVector> {
        let (model, mu) = (self.model, self.mu);
        let aii = self.tableau.a(i, i);
        let n = model.dim();
        let mut k = DVector::zeros(n);
        let mut res_norm = f64::INFINITY;
        for iter in 0..=MAX_STAGE_NEWTON {
            let u = base + &k * aii;
            let r = model.residual(&u, mu, t) * dt;
            let mk = model.mass_apply(&k);
            let res = &mk - &r;
            res_norm = res.norm();
            if !res_norm.is_finite() {
                break;
            }
            // Roundoff floor: the residual cannot be resolved below the
            // rounding error of its two terms.
            let floor = 32.0 * f64::EPSILON * (mk.norm() + r.norm());
            if res_norm <= self.tol.max(floor) {
                return Ok(k);
            }
            if iter == MAX_STAGE_NEWTON {
                break;
            }
            let delta = match model.jac_u_matrix(&u, mu, t) {
                Some(jac) => {
                    let op = self.mass_dense() - jac * (dt * aii);
                    op.lu()
                        .solve(&(-&res))
                        .ok_or(Error::SingularStage { step: 0, stage: i + 1 })?
                }
                None => {
                    let op = FnOperator::new(n, |v: &DVector<f64>| {
                        Ok(model.mass_apply(v) - model.jac_u_apply(&u, mu, t, v) * (dt * aii))
                    });
                    let rel = (0.1 * self.tol / res_norm).clamp(1e-13, 1e-3);
                    let (x, _) = gmres(&op, &(-&res), &DVector::zeros(n), &GmresOptions::new(rel, n.min(400)))?;
                    x
                }
            };
            k += delta;
        }
        Err(Error::StageSolve {
            stage: i + 1,
            residual: res_norm,
            iterations: MAX_STAGE_NEWTON,
        })
    }

    pub(crate) fn evolve(&self, grid: &TimeGrid, u0: &StateVector) -> Result<Trajectory> {
        if u0.len() != self.model.dim() {
            return Err(Error::InvalidInput(format!(
                "initial state has length {}, model dimension is {}",
                u0.len(),
                self.model.dim()
            )));
        }
        let n_t = grid.n_steps();
        let mut states = Vec::with_capacity(n_t + 1);
        let mut stages = Vec::with_capacity(n_t);
        states.push(u0.clone());
        for n in 1..=n_t {
            let (u, k) = self
                .step(&states[n - 1], grid.t(n - 1), grid.dt(n))
                .map_err(|e| e.at_step(n))?;
            states.push(u);
            stages.push(k);
        }
        Ok(Trajectory {
            tableau: self.tableau.clone(),
            grid: grid.clone(),
            states,
            stages,
        })
    }
}

/// One DIRK step from `(u_prev, t_prev)` with step `dt`. Every stage
/// residual `||M k_i - dt r(u_i, mu, t_i)||` ends at or below `tol`.
///
/// Stage failures report the 1-based stage index.
pub fn step<M: Model + ?Sized>(
    model: &M,
    tableau: &ButcherTableau,
    mu: &ParamVector,
    u_prev: &StateVector,
    t_prev: f64,
    dt: f64,
    tol: f64,
) -> Result<(StateVector, Vec<StateVector>)> {
    Integrator::new(model, tableau, mu, tol)?.step(u_prev, t_prev, dt)
}

/// Integrates one period from `u0`, keeping all states and stages.
pub fn evolve<M: Model + ?Sized>(
    model: &M,
    tableau: &ButcherTableau,
    grid: &TimeGrid,
    mu: &ParamVector,
    u0: &StateVector,
    stage_tol: f64,
) -> Result<Trajectory> {
    Integrator::new(model, tableau, mu, stage_tol)?.evolve(grid, u0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_linear_periodic, MatrixFree};

    fn scalar_decay() -> crate::model::LinearPeriodic {
        make_linear_periodic(DMatrix::from_element(1, 1, -1.0), vec![], None, 1.0).unwrap()
    }

    fn empty_mu() -> ParamVector {
        DVector::zeros(0)
    }

    #[test]
    fn zero_dynamics_step() {
        let m = make_linear_periodic(DMatrix::zeros(3, 3), vec![], None, 1.0).unwrap();
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (next, k) = step(&m, &tableau_library("dirk3").unwrap(), &empty_mu(), &u, 0.0, 0.1, 1e-12).unwrap();
        assert_eq!(next, u);
        assert!(k.iter().all(|ki| ki.norm() == 0.0));
    }

    #[test]
    fn implicit_euler_closed_form() {
        let m = scalar_decay();
        let (next, _) = step(
            &m,
            &tableau_library("backward-euler").unwrap(),
            &empty_mu(),
            &DVector::from_element(1, 1.0),
            0.0,
            0.5,
            1e-12,
        )
        .unwrap();
        assert!((next[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dirk3_matches_stability_function() {
        let tab = tableau_library("dirk3").unwrap();
        // R(z) = 1 + z b^T (I - z A)^{-1} 1
        let z = -0.1;
        let s = tab.stages();
        let lhs = DMatrix::<f64>::identity(s, s) - tab.a_matrix() * z;
        let y = lhs.lu().solve(&DVector::from_element(s, 1.0)).unwrap();
        let r = 1.0 + z * tab.weights().dot(&y);
        let (next, _) = step(&scalar_decay(), &tab, &empty_mu(), &DVector::from_element(1, 1.0), 0.0, 0.1, 1e-14).unwrap();
        assert!((next[0] - r).abs() < 1e-15);
    }

    #[test]
    fn repeated_implicit_euler() {
        let grid = TimeGrid::uniform(4, 1.0).unwrap();
        let traj = evolve(
            &scalar_decay(),
            &tableau_library("backward-euler").unwrap(),
            &grid,
            &empty_mu(),
            &DVector::from_element(1, 1.0),
            1e-12,
        )
        .unwrap();
        assert!((traj.final_state()[0] - 0.4096).abs() < 1e-15);
        assert!(traj.update_identity_error() < 1e-15);
    }

    #[test]
    fn matrix_free_matches_dense() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, -3.0, -0.5]);
        let m = make_linear_periodic(a, vec![], None, 1.0).unwrap();
        let tab = tableau_library("sdirk2").unwrap();
        let grid = TimeGrid::uniform(10, 1.0).unwrap();
        let u0 = DVector::from_vec(vec![1.0, -1.0]);
        let dense = evolve(&m, &tab, &grid, &empty_mu(), &u0, 1e-13).unwrap();
        let free = evolve(&MatrixFree(&m), &tab, &grid, &empty_mu(), &u0, 1e-13).unwrap();
        assert!((dense.final_state() - free.final_state()).norm() < 1e-12);
    }

    #[test]
    fn stage_failure_reports_indices() {
        struct Blowup;
        impl Model for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn n_params(&self) -> usize {
                0
            }
            fn period(&self) -> f64 {
                1.0
            }
            fn residual(&self, u: &StateVector, _: &ParamVector, _: f64) -> StateVector {
                u.map(|x| x * x + 10.0)
            }
            fn jac_u_apply(&self, u: &StateVector, _: &ParamVector, _: f64, v: &StateVector) -> StateVector {
                u.component_mul(v) * 2.0
            }
            fn jac_u_apply_transpose(&self, u: &StateVector, _: &ParamVector, _: f64, w: &StateVector) -> StateVector {
                u.component_mul(w) * 2.0
            }
            fn jac_mu_apply_transpose(&self, _: &StateVector, _: &ParamVector, _: f64, _: &StateVector) -> ParamVector {
                DVector::zeros(0)
            }
        }
        // k = dt (k^2 + 10) has no real root for dt = 1.
        let grid = TimeGrid::uniform(2, 2.0).unwrap();
        let err = evolve(
            &Blowup,
            &tableau_library("backward-euler").unwrap(),
            &grid,
            &empty_mu(),
            &DVector::zeros(1),
            1e-12,
        )
        .unwrap_err();
        match err {
            Error::Step { step, source } => {
                assert_eq!(step, 1);
                assert!(matches!(*source, Error::StageSolve { stage: 1, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
