use std::time::Instant;

use super::{check_finite, check_guess, Linearized, PeriodMap, PeriodicSolution, SolveReport, SolveStatus};
use crate::dirk::Trajectory;
use crate::error::{Error, Result};
use crate::lbfgs::LbfgsMemory;
use crate::model::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Descent {
    SteepestDescent,
    Lbfgs { memory: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptShootingOptions {
    /// Stop once `||u^(N_t) - u0|| <= tol`, i.e. `j <= tol^2 / 2`.
    pub tol: f64,
    pub method: Descent,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl OptShootingOptions {
    pub fn new(tol: f64, method: Descent) -> Self {
        Self {
            tol,
            method,
            max_iter: 500,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

/// Gradient of `j(u0) = 0.5 ||u^(N_t) - u0||^2` from one source-free
/// backward sweep: with `r = u^(N_t) - u0` and `lambda^(N_t) = r`,
/// `dj/du0 = lambda^(0) - r`.
fn objective_gradient<P: PeriodMap + ?Sized>(map: &P, traj: &Trajectory, report: &mut SolveReport) -> Result<StateVector> {
    let r = traj.defect();
    let lin = map.linearize(traj)?;
    let lambda0 = lin.adjoint_apply(&r)?;
    report.sensitivity_evolutions += 1;
    Ok(lambda0 - r)
}

/// Minimizes `j(u0) = 0.5 ||u^(N_t)(u0) - u0||^2` by steepest descent or
/// L-BFGS with Armijo backtracking (halving).
///
/// Steepest descent tries twice the previous accepted step first (1 on the
/// first iteration); L-BFGS always tries the unit step.
pub fn optimization_shooting_solve<P: PeriodMap + ?Sized>(
    map: &P,
    u0_guess: &StateVector,
    opts: &OptShootingOptions,
) -> Result<PeriodicSolution> {
    check_guess(map, u0_guess, opts.tol)?;
    let (name, mut memory) = match opts.method {
        Descent::SteepestDescent => ("steepest-descent", None),
        Descent::Lbfgs { memory } => {
            if memory == 0 {
                return Err(Error::InvalidInput("l-bfgs memory must be at least 1".into()));
            }
            ("l-bfgs", Some(LbfgsMemory::new(memory)))
        }
    };
    let start = Instant::now();
    let mut report = SolveReport::new(name);
    let mut traj = map.evolve(u0_guess)?;
    report.primal_evolutions += 1;
    let mut defect = traj.defect().norm();
    report.record(defect, 0, 0);
    let mut alpha_prev = 0.5;
    let mut previous: Option<(StateVector, StateVector)> = None;

    while defect > opts.tol {
        check_finite(defect)?;
        if report.iterations == opts.max_iter {
            break;
        }
        let grad = objective_gradient(map, &traj, &mut report)?;
        let u = traj.initial().clone();
        if let (Some(mem), Some((u_old, g_old))) = (memory.as_mut(), previous.take()) {
            mem.push(&u - u_old, &grad - g_old);
        }
        let mut direction = match &memory {
            Some(mem) => -mem.apply(&grad),
            None => -grad.clone(),
        };
        let mut slope = grad.dot(&direction);
        if !(slope < 0.0) {
            if let Some(mem) = memory.as_mut() {
                mem.clear();
            }
            direction = -grad.clone();
            slope = -grad.norm_squared();
        }
        let j0 = 0.5 * defect * defect;
        let mut alpha = if memory.is_some() { 1.0 } else { 2.0 * alpha_prev };
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial_u = &u + &direction * alpha;
            // A failed stage solve at an aggressive trial point counts as
            // insufficient decrease.
            if let Ok(trial) = map.evolve(&trial_u) {
                report.primal_evolutions += 1;
                let d = trial.defect().norm();
                if d.is_finite() && 0.5 * d * d <= j0 + opts.armijo * alpha * slope {
                    accepted = Some((trial, d));
                    break;
                }
            } else {
                report.primal_evolutions += 1;
            }
            alpha *= 0.5;
        }
        let Some((trial, d)) = accepted else {
            return Err(Error::LineSearch {
                iteration: report.iterations + 1,
            });
        };
        alpha_prev = alpha;
        previous = Some((u, grad));
        traj = trial;
        defect = d;
        report.iterations += 1;
        report.record(defect, 0, 1);
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
