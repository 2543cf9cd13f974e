use std::time::Instant;

use super::{check_finite, check_guess, PeriodMap, PeriodicSolution, SolveReport, SolveStatus};
use crate::error::Result;
use crate::model::StateVector;

/// Repeats `u0 <- u^(N_t)(u0)` until `||u^(N_t) - u0|| <= tol`.
///
/// Stopping on `max_iter` is reported through the status, not as an error.
pub fn fixed_point_solve<P: PeriodMap + ?Sized>(
    map: &P,
    u0_guess: &StateVector,
    tol: f64,
    max_iter: usize,
) -> Result<PeriodicSolution> {
    check_guess(map, u0_guess, tol)?;
    let start = Instant::now();
    let mut report = SolveReport::new("fixed-point");
    let mut traj = map.evolve(u0_guess)?;
    report.primal_evolutions += 1;
    let mut defect = traj.defect().norm();
    report.record(defect, 0, 0);
    while defect > tol {
        check_finite(defect)?;
        if report.iterations == max_iter {
            break;
        }
        let next = traj.final_state().clone();
        traj = map.evolve(&next)?;
        report.primal_evolutions += 1;
        report.iterations += 1;
        defect = traj.defect().norm();
        report.record(defect, 0, 0);
    }
    if defect <= tol {
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
