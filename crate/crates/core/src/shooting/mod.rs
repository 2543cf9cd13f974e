//! Periodic primal solutions `u^(N_t)(u0; mu) = u0` by fixed-point
//! iteration, Newton-Krylov, or minimization of `0.5 ||u^(N_t) - u0||^2`,
//! and the periodic dual (adjoint) boundary-value problem.
//!
//! Solvers work against a [`PeriodMap`], which bundles the one-period
//! evolution and its linearizations. [`DirkMap`] is the standard one.

use std::io::Write;

use crate::dirk::{ButcherTableau, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::io::{csv_err, csv_writer, fmt_f64};
use crate::krylov::KrylovReport;
use crate::model::{Model, ParamVector, StateVector};
use crate::sensitivity::{DualTrajectory, LinearizedTrajectory, QoiSource};

mod dual;
mod fixed_point;
mod newton;
mod optimization;

pub use dual::{dual_solve, DualMethod, DualOptions, DualSolution};
pub use fixed_point::fixed_point_solve;
pub use newton::{newton_krylov_solve, NewtonOptions};
pub use optimization::{optimization_shooting_solve, Descent, OptShootingOptions};

/// Linear sweeps along one primal trajectory.
pub trait Linearized {
    /// `(du^(N_t)/du^(0)) v`
    fn forward(&self, v: &StateVector) -> Result<StateVector>;
    /// Full backward sweep from `lambda^(N_t) = lambda_final`.
    fn adjoint(&self, lambda_final: &StateVector, source: Option<QoiSource<'_>>) -> Result<DualTrajectory>;
    /// `(dlambda^(0)/dlambda^(N_t)) v`
    fn adjoint_apply(&self, v: &StateVector) -> Result<StateVector>;
}

impl<M: Model + ?Sized> Linearized for LinearizedTrajectory<'_, M> {
    fn forward(&self, v: &StateVector) -> Result<StateVector> {
        LinearizedTrajectory::forward(self, v)
    }
    fn adjoint(&self, lambda_final: &StateVector, source: Option<QoiSource<'_>>) -> Result<DualTrajectory> {
        LinearizedTrajectory::adjoint(self, lambda_final, source)
    }
    fn adjoint_apply(&self, v: &StateVector) -> Result<StateVector> {
        LinearizedTrajectory::adjoint_apply(self, v)
    }
}

/// The one-period map `u0 -> u^(N_t)(u0)` at fixed parameters.
pub trait PeriodMap: Sync {
    type Linearized<'t>: Linearized
    where
        Self: 't;

    fn dim(&self) -> usize;
    fn evolve(&self, u0: &StateVector) -> Result<Trajectory>;
    fn linearize<'t>(&'t self, trajectory: &'t Trajectory) -> Result<Self::Linearized<'t>>;
}

/// DIRK integration of a model over one period at fixed `mu`.
#[derive(Debug, Clone)]
pub struct DirkMap<M> {
    model: M,
    tableau: ButcherTableau,
    grid: TimeGrid,
    mu: ParamVector,
    stage_tol: f64,
}

impl<M: Model> DirkMap<M> {
    /// `stage_tol` bounds both the nonlinear stage residuals and every
    /// linear stage solve in the sensitivity sweeps.
    pub fn new(model: M, tableau: ButcherTableau, grid: TimeGrid, mu: ParamVector, stage_tol: f64) -> Result<Self> {
        if mu.len() != model.n_params() {
            return Err(Error::InvalidInput(format!(
                "parameter vector has length {}, model expects {}",
                mu.len(),
                model.n_params()
            )));
        }
        if !(stage_tol > 0.0) {
            return Err(Error::InvalidInput("stage tolerance must be positive".into()));
        }
        let (tg, tm) = (grid.period(), model.period());
        if (tg - tm).abs() > 1e-12 * tm.abs().max(1.0) {
            return Err(Error::InvalidInput(format!("grid spans {tg} but the model period is {tm}")));
        }
        Ok(Self {
            model,
            tableau,
            grid,
            mu,
            stage_tol,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn tableau(&self) -> &ButcherTableau {
        &self.tableau
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mu(&self) -> &ParamVector {
        &self.mu
    }

    pub fn stage_tol(&self) -> f64 {
        self.stage_tol
    }

    /// The same map at other parameters.
    pub fn at(&self, mu: ParamVector) -> Result<DirkMap<&M>> {
        DirkMap::new(&self.model, self.tableau.clone(), self.grid.clone(), mu, self.stage_tol)
    }
}

impl<M: Model> PeriodMap for DirkMap<M> {
    type Linearized<'t>
        = LinearizedTrajectory<'t, M>
    where
        Self: 't;

    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn evolve(&self, u0: &StateVector) -> Result<Trajectory> {
        crate::dirk::evolve(&self.model, &self.tableau, &self.grid, &self.mu, u0, self.stage_tol)
    }

    fn linearize<'t>(&'t self, trajectory: &'t Trajectory) -> Result<Self::Linearized<'t>> {
        LinearizedTrajectory::new(&self.model, trajectory, &self.mu, self.stage_tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

/// One row of a convergence history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// Periodicity defect `||u^(N_t) - u0||` (or the dual analog).
    pub defect: f64,
    /// Krylov iterations spent in this outer iteration.
    pub inner_iterations: usize,
    /// Linearized sweeps used as operator applications so far.
    pub cumulative_matvecs: usize,
}

/// Convergence record for any primal or dual periodic solve.
///
/// `history[0]` is the initial guess; `precondition_sweeps` leading rows
/// after it are nonlinear preconditioning sweeps (Newton only).
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: String,
    pub history: Vec<IterationRecord>,
    pub inner: Vec<KrylovReport>,
    /// Outer iterations of the method proper.
    pub iterations: usize,
    pub precondition_sweeps: usize,
    pub primal_evolutions: usize,
    /// Forward or backward linear sweeps over the trajectory.
    pub sensitivity_evolutions: usize,
    pub wall_time: f64,
    pub status: SolveStatus,
    /// Non-fatal events, such as an inner solve stopping short.
    pub notes: Vec<String>,
}

impl SolveReport {
    pub(crate) fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            history: Vec::new(),
            inner: Vec::new(),
            iterations: 0,
            precondition_sweeps: 0,
            primal_evolutions: 0,
            sensitivity_evolutions: 0,
            wall_time: 0.0,
            status: SolveStatus::MaxIterations,
            notes: Vec::new(),
        }
    }

    pub(crate) fn record(&mut self, defect: f64, inner_iterations: usize, matvecs: usize) {
        let cumulative_matvecs = self.history.last().map_or(0, |r| r.cumulative_matvecs) + matvecs;
        self.history.push(IterationRecord {
            defect,
            inner_iterations,
            cumulative_matvecs,
        });
    }

    pub fn defects(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.defect).collect()
    }

    pub fn final_defect(&self) -> f64 {
        self.history.last().map_or(f64::INFINITY, |r| r.defect)
    }

    pub fn matvecs(&self) -> usize {
        self.history.last().map_or(0, |r| r.cumulative_matvecs)
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Rows of `iteration,defect,inner_iterations,cumulative_matvecs`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["iteration", "defect", "inner_iterations", "cumulative_matvecs"])
            .map_err(csv_err)?;
        for (i, r) in self.history.iter().enumerate() {
            out.write_record([
                i.to_string(),
                fmt_f64(r.defect),
                r.inner_iterations.to_string(),
                r.cumulative_matvecs.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A periodic initial condition with its trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSolution {
    pub u0: StateVector,
    pub trajectory: Trajectory,
    pub defect: f64,
    pub report: SolveReport,
}

impl PeriodicSolution {
    /// Turns a run that stopped on its iteration limit into an error.
    pub fn ensure_converged(self) -> Result<Self> {
        if self.report.converged() {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                method: self.report.method.clone(),
                iterations: self.report.iterations,
                defect: self.defect,
            })
        }
    }
}

fn check_guess<P: PeriodMap + ?Sized>(map: &P, u0: &StateVector, tol: f64) -> Result<()> {
    if u0.len() != map.dim() {
        return Err(Error::InvalidInput(format!(
            "initial guess has length {}, state dimension is {}",
            u0.len(),
            map.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Bails out on non-finite or runaway defects.
fn check_finite(defect: f64) -> Result<()> {
    if defect.is_finite() && defect < 1e100 {
        Ok(())
    } else {
        Err(Error::Diverged { residual: defect })
    }
}
