//! Total derivatives of quantities of interest along the manifold of
//! periodic solutions, their finite-difference verification, and the dense
//! brute-force oracle for the linear model.
//!
//! With the periodic dual solution `kappa` for quantity `q`,
//!
//! ```text
//! dF_q/dmu = dF_q/dmu|_explicit + sum_n dt_n sum_i (dr/dmu)^T(u_i^(n), mu, t_i^(n)) kappa_i^(n)
//! ```

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::dirk::{accumulate_qoi, evolve, ButcherTableau, QoiValue, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::io::{csv_err, csv_writer, fmt_f64};
use crate::model::{LinearPeriodic, Model, ParamVector, Qoi, StateVector};
use crate::sensitivity::DualTrajectory;
use crate::shooting::{dual_solve, newton_krylov_solve, DirkMap, DualOptions, DualSolution, NewtonOptions, PeriodicSolution};

/// `dF/dmu` on the periodic manifold, one row per quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldGradient {
    pub values: DMatrix<f64>,
    pub qoi_names: Vec<String>,
    pub primal_tol: f64,
    pub dual_tol: f64,
}

impl ManifoldGradient {
    /// Rows of `qoi,param,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["qoi", "param", "value"]).map_err(csv_err)?;
        for q in 0..self.values.nrows() {
            for p in 0..self.values.ncols() {
                out.write_record([self.qoi_names[q].clone(), p.to_string(), fmt_f64(self.values[(q, p)])])
                    .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOptions {
    pub newton: NewtonOptions,
    pub dual: DualOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub solution: PeriodicSolution,
    pub qoi: QoiValue,
    pub gradient: ManifoldGradient,
    pub duals: Vec<DualSolution>,
}

/// Parameter gradient of quantity `index` from its dual trajectory.
pub fn assemble_gradient<M: Model + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    mu: &ParamVector,
    qoi: &QoiValue,
    index: usize,
    dual: &DualTrajectory,
) -> ParamVector {
    let mut g: ParamVector = qoi.dmu.row(index).transpose();
    for n in 1..=trajectory.n_steps() {
        let dt = trajectory.grid.dt(n);
        for (i, kappa) in dual.stage_duals[n - 1].iter().enumerate() {
            let u = trajectory.stage_state(n, i);
            let t = trajectory.stage_time(n, i);
            g.axpy(dt, &model.jac_mu_apply_transpose(&u, mu, t, kappa), 1.0);
        }
    }
    g
}

/// Quantities, their partials and their manifold gradients at an already
/// periodic solution. Dual solves for different quantities run on the
/// current rayon pool; results do not depend on the thread count.
pub fn gradient_at_solution<M: Model, Q: Qoi + ?Sized>(
    map: &DirkMap<M>,
    qoi: &Q,
    solution: &PeriodicSolution,
    dual_opts: &DualOptions,
    primal_tol: f64,
) -> Result<(QoiValue, ManifoldGradient, Vec<DualSolution>)> {
    let traj = &solution.trajectory;
    let value = accumulate_qoi(qoi, traj, map.mu()).map_err(|e| e.labeled("qoi"))?;
    let duals: Vec<DualSolution> = (0..qoi.n_qoi())
        .into_par_iter()
        .map(|q| dual_solve(map, traj, &value, q, dual_opts).map_err(|e| e.labeled("dual")))
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(qoi.n_qoi(), map.mu().len());
    for (q, d) in duals.iter().enumerate() {
        let g = assemble_gradient(map.model(), traj, map.mu(), &value, q, &d.dual);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite gradient for quantity {q}")).labeled("assembly"));
        }
        values.set_row(q, &g.transpose());
    }
    let gradient = ManifoldGradient {
        values,
        qoi_names: (0..qoi.n_qoi()).map(|q| qoi.name(q)).collect(),
        primal_tol,
        dual_tol: dual_opts.tol,
    };
    Ok((value, gradient, duals))
}

/// Periodic solve (Newton-Krylov), quadrature, one periodic dual solve per
/// quantity, and gradient assembly. Failures are labeled with the stage
/// (`primal`, `qoi`, `dual`, `assembly`) that raised them.
pub fn periodic_gradient<M: Model, Q: Qoi + ?Sized>(
    map: &DirkMap<M>,
    qoi: &Q,
    u0_guess: &StateVector,
    opts: &GradientOptions,
) -> Result<GradientResult> {
    let solution = newton_krylov_solve(map, u0_guess, &opts.newton)
        .and_then(PeriodicSolution::ensure_converged)
        .map_err(|e| e.labeled("primal"))?;
    let (qoi_value, gradient, duals) = gradient_at_solution(map, qoi, &solution, &opts.dual, opts.newton.tol)?;
    Ok(GradientResult {
        solution,
        qoi: qoi_value,
        gradient,
        duals,
    })
}

/// One finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub qoi: String,
    pub param: usize,
    pub tau: f64,
    pub fd_value: f64,
    pub adjoint_value: f64,
    /// `|fd - adjoint| / |adjoint|`; NaN when a perturbed solve failed.
    pub rel_error: f64,
}

/// Writes rows of `qoi,param,tau,fd_value,adjoint_value,rel_error`.
pub fn write_grad_check_csv<W: Write>(w: W, rows: &[GradCheckRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["qoi", "param", "tau", "fd_value", "adjoint_value", "rel_error"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.qoi.clone(),
            r.param.to_string(),
            fmt_f64(r.tau),
            fmt_f64(r.fd_value),
            fmt_f64(r.adjoint_value),
            fmt_f64(r.rel_error),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Quantity values at the periodic solution for parameters `mu`, with
/// Newton warm-started from `u0_guess`.
pub fn periodic_qoi<M: Model, Q: Qoi + ?Sized>(
    map: &DirkMap<M>,
    qoi: &Q,
    mu: &ParamVector,
    u0_guess: &StateVector,
    newton: &NewtonOptions,
) -> Result<DVector<f64>> {
    let at = map.at(mu.clone())?;
    let sol = newton_krylov_solve(&at, u0_guess, newton)?.ensure_converged()?;
    Ok(accumulate_qoi(qoi, &sol.trajectory, mu)?.values)
}

/// Central differences `(F(mu + tau e_p) - F(mu - tau e_p)) / (2 tau)` with a
/// full periodic re-solve at each perturbed point, compared against
/// `gradient`. Rows are ordered by parameter, then `tau`, then quantity.
pub fn grad_check<M: Model, Q: Qoi + ?Sized>(
    map: &DirkMap<M>,
    qoi: &Q,
    base_u0: &StateVector,
    gradient: &ManifoldGradient,
    taus: &[f64],
    newton: &NewtonOptions,
) -> Result<Vec<GradCheckRow>> {
    if taus.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidInput("finite-difference steps must be positive".into()));
    }
    if newton.tol > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "finite-difference checks need periodic solves to 1e-12, got tolerance {:e}",
            newton.tol
        )));
    }
    let n_mu = map.mu().len();
    let jobs: Vec<(usize, f64)> = (0..n_mu).flat_map(|p| taus.iter().map(move |&t| (p, t))).collect();
    let evaluations: Vec<Option<DVector<f64>>> = jobs
        .par_iter()
        .map(|&(p, tau)| {
            let mut plus = map.mu().clone();
            plus[p] += tau;
            let mut minus = map.mu().clone();
            minus[p] -= tau;
            let fp = periodic_qoi(map, qoi, &plus, base_u0, newton).ok()?;
            let fm = periodic_qoi(map, qoi, &minus, base_u0, newton).ok()?;
            Some((fp - fm) / (2.0 * tau))
        })
        .collect();
    let mut rows = Vec::with_capacity(jobs.len() * qoi.n_qoi());
    for (&(p, tau), fd) in jobs.iter().zip(&evaluations) {
        for q in 0..qoi.n_qoi() {
            let adjoint_value = gradient.values[(q, p)];
            let (fd_value, rel_error) = match fd {
                Some(fd) => (fd[q], (fd[q] - adjoint_value).abs() / adjoint_value.abs().max(f64::MIN_POSITIVE)),
                None => (f64::NAN, f64::NAN),
            };
            rows.push(GradCheckRow {
                qoi: gradient.qoi_names[q].clone(),
                param: p,
                tau,
                fd_value,
                adjoint_value,
                rel_error,
            });
        }
    }
    Ok(rows)
}

/// Brute-force description of the affine one-period map of the linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOracle {
    /// Monodromy: `u^(N_t) = phi u0 + c`.
    pub phi: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Discrete periodic initial condition `(I - phi)^{-1} c`.
    pub u0: DVector<f64>,
}

impl LinearOracle {
    /// Eigenvalues of `phi` by decreasing modulus.
    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        let mut ev: Vec<_> = self.phi.complex_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
        ev
    }
}

/// `phi` and `c` of an affine period map, column by column from evolutions
/// of the zero state and the unit vectors.
pub fn affine_period_map<M: Model + ?Sized>(
    model: &M,
    tableau: &ButcherTableau,
    grid: &TimeGrid,
    mu: &ParamVector,
    stage_tol: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = model.dim();
    let c = evolve(model, tableau, grid, mu, &DVector::zeros(n), stage_tol)?
        .final_state()
        .clone();
    let mut phi = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let end = evolve(model, tableau, grid, mu, &e, stage_tol)?;
        phi.set_column(j, &(end.final_state() - &c));
    }
    Ok((phi, c))
}

/// Dense periodic solution of the linear model. Fails when `I - phi` is
/// numerically singular (a neutrally stable instance).
pub fn dense_oracle_linear(
    model: &LinearPeriodic,
    tableau: &ButcherTableau,
    grid: &TimeGrid,
    mu: &ParamVector,
    stage_tol: f64,
) -> Result<LinearOracle> {
    let n = model.dim();
    if n > 200 {
        return Err(Error::Oracle(format!("dense oracle limited to 200 unknowns, got {n}")));
    }
    let (phi, c) = affine_period_map(model, tableau, grid, mu, stage_tol)?;
    let shifted = DMatrix::<f64>::identity(n, n) - &phi;
    let sv = shifted.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 1e-10 * smax.max(1.0) {
        return Err(Error::Oracle(format!(
            "I - phi is singular (smallest singular value {smin:e})"
        )));
    }
    let u0 = shifted
        .lu()
        .solve(&c)
        .ok_or_else(|| Error::Oracle("I - phi could not be factored".into()))?;
    Ok(LinearOracle { phi, c, u0 })
}
