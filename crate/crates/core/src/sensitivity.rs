//! Linear evolutions along a frozen primal trajectory: directional forward
//! sensitivities, backward adjoint sweeps with optional quantity-of-interest
//! sources, and adjoint sensitivities.
//!
//! With `S_i^(n) = M - dt_n a_ii J_i^(n)` and `J_i^(n) = dr/du(u_i^(n))`,
//! the forward sweep solves, for each step and increasing stage `i`,
//!
//! ```text
//! S_i w_i = dt J_i (p + sum_{j<i} a_ij w_j),   p <- p + sum_i b_i w_i
//! ```
//!
//! and the backward sweep solves, for decreasing step and stage,
//!
//! ```text
//! S_i^T kappa_i = dF/dk_i + b_i lambda^(n) + sum_{j>i} a_ji dt J_j^T kappa_j
//! lambda^(n-1)  = lambda^(n) + dF/du^(n-1) + sum_i dt J_i^T kappa_i
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector, LU};

use crate::dirk::{write_records_binary, write_records_csv, ButcherTableau, QoiValue, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::krylov::{gmres, FnOperator, GmresOptions};
use crate::model::{Model, ParamVector, StateVector};

/// Adjoint states `lambda^(0..N_t)` and stage duals; `stage_duals[n - 1][i]`
/// holds `kappa_{i+1}^(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTrajectory {
    pub tableau: ButcherTableau,
    pub grid: TimeGrid,
    pub lambdas: Vec<StateVector>,
    pub stage_duals: Vec<Vec<StateVector>>,
}

impl DualTrajectory {
    pub fn initial(&self) -> &StateVector {
        &self.lambdas[0]
    }

    pub fn terminal(&self) -> &StateVector {
        &self.lambdas[self.lambdas.len() - 1]
    }

    /// Same layout as [`Trajectory::write_csv`], with `lambda` in place of
    /// `u` and `kappa` in place of `k`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_records_csv(w, &self.lambdas, &self.stage_duals, &self.grid, &self.tableau)
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        write_records_binary(w, &self.lambdas, &self.stage_duals)
    }
}

/// Source terms for the backward sweep: the partials of quantity `index`.
#[derive(Debug, Clone, Copy)]
pub struct QoiSource<'a> {
    pub value: &'a QoiValue,
    pub index: usize,
}

enum StageLinearization {
    Dense {
        jac: DMatrix<f64>,
        lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    },
    MatrixFree {
        u: StateVector,
        t: f64,
    },
}

/// A primal trajectory prepared for repeated linear sweeps. Dense stage
/// operators are factored once here and reused by every sweep.
pub struct LinearizedTrajectory<'a, M: Model + ?Sized> {
    model: &'a M,
    trajectory: &'a Trajectory,
    mu: &'a ParamVector,
    tol: f64,
    stages: Vec<Vec<StageLinearization>>,
}

impl<'a, M: Model + ?Sized> LinearizedTrajectory<'a, M> {
    /// `tol` bounds the residual of every linear stage solve.
    pub fn new(model: &'a M, trajectory: &'a Trajectory, mu: &'a ParamVector, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidInput(format!("linear stage tolerance must be positive, got {tol}")));
        }
        let tab = &trajectory.tableau;
        let mut mass: Option<DMatrix<f64>> = None;
        let mut stages = Vec::with_capacity(trajectory.n_steps());
        for n in 1..=trajectory.n_steps() {
            let dt = trajectory.grid.dt(n);
            let mut row = Vec::with_capacity(tab.stages());
            for i in 0..tab.stages() {
                let u = trajectory.stage_state(n, i);
                let t = trajectory.stage_time(n, i);
                row.push(match model.jac_u_matrix(&u, mu, t) {
                    Some(jac) => {
                        let m = mass.get_or_insert_with(|| model.mass_matrix());
                        let op = &*m - &jac * (dt * tab.a(i, i));
                        let lu_t = op.transpose().lu();
                        let lu = op.lu();
                        if !lu.is_invertible() {
                            return Err(Error::SingularStage { step: n, stage: i + 1 });
                        }
                        StageLinearization::Dense { jac, lu, lu_t }
                    }
                    None => StageLinearization::MatrixFree { u, t },
                });
            }
            stages.push(row);
        }
        Ok(Self {
            model,
            trajectory,
            mu,
            tol,
            stages,
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        self.trajectory
    }

    pub fn dim(&self) -> usize {
        self.trajectory.dim()
    }

    fn jac_apply(&self, n: usize, i: usize, v: &StateVector) -> StateVector {
        match &self.stages[n - 1][i] {
            StageLinearization::Dense { jac, .. } => jac * v,
            StageLinearization::MatrixFree { u, t } => self.model.jac_u_apply(u, self.mu, *t, v),
        }
    }

    fn jac_apply_transpose(&self, n: usize, i: usize, w: &StateVector) -> StateVector {
        match &self.stages[n - 1][i] {
            StageLinearization::Dense { jac, .. } => jac.tr_mul(w),
            StageLinearization::MatrixFree { u, t } => self.model.jac_u_apply_transpose(u, self.mu, *t, w),
        }
    }

    /// Solves `S_i^(n) x = rhs`, or its transpose.
    fn stage_solve(&self, n: usize, i: usize, rhs: &StateVector, transpose: bool) -> Result<StateVector> {
        match &self.stages[n - 1][i] {
            StageLinearization::Dense { lu, lu_t, .. } => {
                let f = if transpose { lu_t } else { lu };
                f.solve(rhs).ok_or(Error::SingularStage { step: n, stage: i + 1 })
            }
            StageLinearization::MatrixFree { u, t } => {
                let rhs_norm = rhs.norm();
                if rhs_norm == 0.0 {
                    return Ok(DVector::zeros(rhs.len()));
                }
                let (model, mu, t) = (self.model, self.mu, *t);
                let scale = self.trajectory.grid.dt(n) * self.trajectory.tableau.a(i, i);
                let dim = rhs.len();
                let rel = (0.1 * self.tol / rhs_norm).clamp(1e-15, 1e-2);
                let opts = GmresOptions::new(rel, dim.min(500));
                let (x, rep) = if transpose {
                    let op = FnOperator::new(dim, |v: &DVector<f64>| {
                        Ok(model.mass_apply_transpose(v) - model.jac_u_apply_transpose(u, mu, t, v) * scale)
                    });
                    gmres(&op, rhs, &DVector::zeros(dim), &opts)?
                } else {
                    let op = FnOperator::new(dim, |v: &DVector<f64>| {
                        Ok(model.mass_apply(v) - model.jac_u_apply(u, mu, t, v) * scale)
                    });
                    gmres(&op, rhs, &DVector::zeros(dim), &opts)?
                };
                if rep.final_residual() > self.tol.max(1e-13 * rhs_norm) {
                    return Err(Error::NotConverged {
                        method: format!("linear stage solve (step {n}, stage {})", i + 1),
                        iterations: rep.iterations,
                        defect: rep.final_residual(),
                    });
                }
                Ok(x)
            }
        }
    }

    /// `(du^(N_t)/du^(0)) v`.
    pub fn forward(&self, v: &StateVector) -> Result<StateVector> {
        let tab = &self.trajectory.tableau;
        let s = tab.stages();
        let mut p = v.clone();
        let mut w: Vec<StateVector> = Vec::with_capacity(s);
        for n in 1..=self.trajectory.n_steps() {
            let dt = self.trajectory.grid.dt(n);
            w.clear();
            for i in 0..s {
                let mut x = p.clone();
                for (j, wj) in w.iter().enumerate() {
                    x.axpy(tab.a(i, j), wj, 1.0);
                }
                let rhs = self.jac_apply(n, i, &x) * dt;
                w.push(self.stage_solve(n, i, &rhs, false)?);
            }
            for (i, wi) in w.iter().enumerate() {
                p.axpy(tab.b(i), wi, 1.0);
            }
        }
        Ok(p)
    }

    /// Backward sweep from `lambda^(N_t) = lambda_final`, keeping every
    /// adjoint state and stage dual.
    pub fn adjoint(&self, lambda_final: &StateVector, source: Option<QoiSource<'_>>) -> Result<DualTrajectory> {
        let n_t = self.trajectory.n_steps();
        let mut lambdas = vec![DVector::zeros(0); n_t + 1];
        let mut stage_duals = vec![Vec::new(); n_t];
        lambdas[n_t] = lambda_final.clone();
        self.sweep_back(lambda_final, source, |n, lambda, kappas| {
            lambdas[n - 1] = lambda.clone();
            stage_duals[n - 1] = kappas.to_vec();
        })?;
        Ok(DualTrajectory {
            tableau: self.trajectory.tableau.clone(),
            grid: self.trajectory.grid.clone(),
            lambdas,
            stage_duals,
        })
    }

    /// `(dlambda^(0)/dlambda^(N_t)) v`, the source-free backward sweep.
    pub fn adjoint_apply(&self, v: &StateVector) -> Result<StateVector> {
        self.sweep_back(v, None, |_, _, _| {})
    }

    fn sweep_back<F>(&self, lambda_final: &StateVector, source: Option<QoiSource<'_>>, mut record: F) -> Result<StateVector>
    where
        F: FnMut(usize, &StateVector, &[StateVector]),
    {
        let tab = &self.trajectory.tableau;
        let s = tab.stages();
        let dim = self.dim();
        if lambda_final.len() != dim {
            return Err(Error::InvalidInput(format!(
                "terminal adjoint has length {}, state dimension is {dim}",
                lambda_final.len()
            )));
        }
        if let Some(src) = source {
            if src.index >= src.value.n_qoi() {
                return Err(Error::InvalidInput(format!("quantity index {} out of range", src.index)));
            }
        }
        let mut lambda = lambda_final.clone();
        let mut kappa = vec![DVector::zeros(dim); s];
        let mut jt = vec![DVector::zeros(dim); s];
        for n in (1..=self.trajectory.n_steps()).rev() {
            let dt = self.trajectory.grid.dt(n);
            for i in (0..s).rev() {
                let mut rhs = &lambda * tab.b(i);
                if let Some(src) = source {
                    rhs += src.value.dk[n - 1][i].column(src.index);
                }
                for j in i + 1..s {
                    rhs.axpy(tab.a(j, i), &jt[j], 1.0);
                }
                kappa[i] = self.stage_solve(n, i, &rhs, true)?;
                jt[i] = self.jac_apply_transpose(n, i, &kappa[i]) * dt;
            }
            if let Some(src) = source {
                lambda += src.value.du[n - 1].column(src.index);
            }
            for j in &jt {
                lambda += j;
            }
            record(n, &lambda, &kappa);
        }
        Ok(lambda)
    }
}

/// `(du^(N_t)/du^(0)) v` along `trajectory`.
pub fn forward_sensitivity_apply<M: Model + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    mu: &ParamVector,
    v: &StateVector,
    tol: f64,
) -> Result<StateVector> {
    LinearizedTrajectory::new(model, trajectory, mu, tol)?.forward(v)
}

/// Backward adjoint evolution with terminal value `lambda_final` and
/// optional quantity-of-interest sources.
pub fn adjoint_backward_evolve<M: Model + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    mu: &ParamVector,
    lambda_final: &StateVector,
    source: Option<QoiSource<'_>>,
    tol: f64,
) -> Result<DualTrajectory> {
    LinearizedTrajectory::new(model, trajectory, mu, tol)?.adjoint(lambda_final, source)
}

/// `(dlambda^(0)/dlambda^(N_t)) v` along `trajectory`.
pub fn adjoint_sensitivity_apply<M: Model + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    mu: &ParamVector,
    v: &StateVector,
    tol: f64,
) -> Result<StateVector> {
    LinearizedTrajectory::new(model, trajectory, mu, tol)?.adjoint_apply(v)
}
