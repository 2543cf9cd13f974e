use std::cell::Cell;
use std::time::Instant;

use nalgebra::DVector;

use super::{Linearized, PeriodMap, SolveReport, SolveStatus};
use crate::dirk::{QoiValue, Trajectory};
use crate::error::{Error, Result};
use crate::krylov::{gmres, FnOperator, GmresOptions};
use crate::model::StateVector;
use crate::sensitivity::{DualTrajectory, QoiSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualMethod {
    Gmres,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    pub method: DualMethod,
    /// Boundary-condition residual relative to its value at `lambda^(N_t) = 0`.
    pub tol: f64,
    pub max_iter: usize,
}

impl DualOptions {
    pub fn new(method: DualMethod, tol: f64) -> Self {
        Self {
            method,
            tol,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub lambda_final: StateVector,
    pub dual: DualTrajectory,
    /// Residual of `lambda^(N_t) = lambda^(0) + dF/du^(N_t)` for the returned
    /// trajectory.
    pub bc_residual: f64,
    pub report: SolveReport,
}

/// Solves the periodic adjoint problem for quantity `index`: find
/// `lambda^(N_t)` with `lambda^(N_t) = lambda^(0)(lambda^(N_t)) + dF/du^(N_t)`.
///
/// Writing `lambda^(0) = Phi^T x + d`, where `d` is the backward sweep of the
/// sources from `x = 0`, this is `(Phi^T - I) x = -(d + g)` (GMRES) or the
/// iteration `x <- Phi^T x + d + g` (fixed point). The full dual trajectory
/// is regenerated from the accepted terminal value.
pub fn dual_solve<P: PeriodMap + ?Sized>(
    map: &P,
    trajectory: &Trajectory,
    qoi: &QoiValue,
    index: usize,
    opts: &DualOptions,
) -> Result<DualSolution> {
    if index >= qoi.n_qoi() {
        return Err(Error::InvalidInput(format!("quantity index {index} out of range")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("dual tolerance must be positive".into()));
    }
    let start = Instant::now();
    let n = map.dim();
    let source = QoiSource { value: qoi, index };
    let name = match opts.method {
        DualMethod::Gmres => "dual-gmres",
        DualMethod::FixedPoint => "dual-fixed-point",
    };
    let mut report = SolveReport::new(name);
    let lin = map.linearize(trajectory)?;
    let g: StateVector = qoi.du[trajectory.n_steps()].column(index).into_owned();
    let d = lin.adjoint(&DVector::zeros(n), Some(source))?.initial().clone();
    report.sensitivity_evolutions += 1;
    let b = &d + &g;
    let b_norm = b.norm();

    let x = match opts.method {
        DualMethod::Gmres => {
            let sweeps = Cell::new(0usize);
            let op = FnOperator::new(n, |v: &DVector<f64>| {
                sweeps.set(sweeps.get() + 1);
                Ok(lin.adjoint_apply(v)? - v)
            });
            let (x, krylov) = gmres(&op, &(-&b), &DVector::zeros(n), &GmresOptions::new(opts.tol, opts.max_iter))?;
            report.sensitivity_evolutions += sweeps.get();
            for (i, r) in krylov.residual_history.iter().enumerate() {
                report.record(*r, 0, usize::from(i > 0));
            }
            report.iterations = krylov.iterations;
            let converged = krylov.converged;
            report.inner.push(krylov);
            if !converged {
                return Err(Error::NotConverged {
                    method: name.into(),
                    iterations: report.iterations,
                    defect: report.final_defect(),
                });
            }
            x
        }
        DualMethod::FixedPoint => {
            let mut x = DVector::zeros(n);
            let mut next = b.clone();
            let mut res = b_norm;
            report.record(res, 0, 0);
            while res > opts.tol * b_norm {
                if !res.is_finite() || res > 1e8 * b_norm.max(f64::MIN_POSITIVE) {
                    return Err(Error::Diverged { residual: res });
                }
                if report.iterations == opts.max_iter {
                    return Err(Error::NotConverged {
                        method: name.into(),
                        iterations: report.iterations,
                        defect: res,
                    });
                }
                x = next;
                next = lin.adjoint_apply(&x)? + &b;
                report.sensitivity_evolutions += 1;
                report.iterations += 1;
                res = (&next - &x).norm();
                report.record(res, 0, 1);
            }
            x
        }
    };
    report.status = SolveStatus::Converged;

    let dual = lin.adjoint(&x, Some(source))?;
    report.sensitivity_evolutions += 1;
    let bc_residual = (dual.terminal() - dual.initial() - &g).norm();
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(DualSolution {
        lambda_final: x,
        dual,
        bc_residual,
        report,
    })
}
