use std::cell::Cell;
use std::time::Instant;

use nalgebra::DVector;

use super::{check_finite, check_guess, Linearized, PeriodMap, PeriodicSolution, SolveReport, SolveStatus};
use crate::error::{Error, Result};
use crate::krylov::{gmres, FnOperator, GmresOptions};
use crate::model::StateVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Periodicity tolerance on `||u^(N_t) - u0||`.
    pub tol: f64,
    /// Relative GMRES tolerance for the Newton correction.
    pub gmres_tol: f64,
    pub gmres_max_iter: usize,
    /// Fixed-point sweeps before the first Newton step.
    pub precondition: usize,
    pub max_newton: usize,
    /// Corrections longer than this are scaled back to it.
    pub max_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            gmres_tol: 1e-3,
            gmres_max_iter: 200,
            precondition: 0,
            max_newton: 20,
            max_step: 1e3,
        }
    }
}

/// Newton's method on `R(u0) = u^(N_t)(u0) - u0`. Each correction solves
/// `(du^(N_t)/du0 - I) d = R` by GMRES with forward-sensitivity matvecs,
/// then sets `u0 <- u0 - d`.
///
/// A GMRES solve that stops short still yields a step (its best iterate);
/// the event is noted in the report.
pub fn newton_krylov_solve<P: PeriodMap + ?Sized>(
    map: &P,
    u0_guess: &StateVector,
    opts: &NewtonOptions,
) -> Result<PeriodicSolution> {
    check_guess(map, u0_guess, opts.tol)?;
    if !(opts.gmres_tol > 0.0 && opts.gmres_tol < 1.0) {
        return Err(Error::InvalidInput(format!("gmres tolerance must lie in (0, 1), got {}", opts.gmres_tol)));
    }
    let start = Instant::now();
    let mut report = SolveReport::new("newton-krylov");
    let mut traj = map.evolve(u0_guess)?;
    report.primal_evolutions += 1;
    let mut defect = traj.defect().norm();
    report.record(defect, 0, 0);

    while defect > opts.tol && report.precondition_sweeps < opts.precondition {
        check_finite(defect)?;
        let next = traj.final_state().clone();
        traj = map.evolve(&next)?;
        report.primal_evolutions += 1;
        report.precondition_sweeps += 1;
        defect = traj.defect().norm();
        report.record(defect, 0, 0);
    }

    while defect > opts.tol {
        check_finite(defect)?;
        if report.iterations == opts.max_newton {
            break;
        }
        let residual = traj.defect();
        let (step, krylov) = {
            let lin = map.linearize(&traj)?;
            let sweeps = Cell::new(0usize);
            let op = FnOperator::new(map.dim(), |v: &DVector<f64>| {
                sweeps.set(sweeps.get() + 1);
                Ok(lin.forward(v)? - v)
            });
            let gopts = GmresOptions::new(opts.gmres_tol, opts.gmres_max_iter);
            let out = gmres(&op, &residual, &DVector::zeros(map.dim()), &gopts)?;
            report.sensitivity_evolutions += sweeps.get();
            out
        };
        report.iterations += 1;
        if !krylov.converged {
            report.notes.push(format!(
                "newton iteration {}: gmres stopped at relative residual {:e}",
                report.iterations,
                krylov.final_residual() / residual.norm()
            ));
        }
        let mut step = step;
        let len = step.norm();
        if len > opts.max_step {
            step *= opts.max_step / len;
            report
                .notes
                .push(format!("newton iteration {}: step of length {len:e} clipped", report.iterations));
        }
        let next = traj.initial() - step;
        traj = map.evolve(&next)?;
        report.primal_evolutions += 1;
        defect = traj.defect().norm();
        report.record(defect, krylov.iterations, krylov.matvecs);
        report.inner.push(krylov);
    }
    if defect <= opts.tol {
        report.status = SolveStatus::Converged;
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(PeriodicSolution {
        u0: traj.initial().clone(),
        trajectory: traj,
        defect,
        report,
    })
}
