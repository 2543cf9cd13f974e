//! Reduced-space optimization over `mu`: every candidate is evaluated at a
//! periodic solution of the discrete system, with gradients from the
//! periodic adjoint.
//!
//! Equality constraints `F_c(mu) = target` are handled by an augmented
//! Lagrangian
//!
//! ```text
//! L(mu) = f - sum_i lambda_i c_i + (rho / 2) sum_i c_i^2,   c_i = F_{c_i} - target_i
//! ```
//!
//! minimized over the parameter box by projected L-BFGS.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dirk::{tableau_library, TimeGrid};
use crate::error::{Error, Result};
use crate::gradient::{gradient_at_solution, periodic_qoi};
use crate::io::{csv_err, csv_writer, fmt_f64};
use crate::lbfgs::LbfgsMemory;
use crate::model::{make_forced_vdp, ForcedVanDerPol, Model, ParamVector, Qoi, StateVector, VdpQoi};
use crate::shooting::{newton_krylov_solve, DirkMap, DualOptions, NewtonOptions};

/// Minimize quantity `objective` subject to `F_q = target` for each
/// `(q, target)` in `constraints`, within optional bounds.
pub struct OptProblem<M, Q> {
    /// Carries the model, scheme, grid and the initial parameters.
    pub map: DirkMap<M>,
    pub qoi: Q,
    pub objective: usize,
    pub constraints: Vec<(usize, f64)>,
    pub bounds: Option<(ParamVector, ParamVector)>,
    pub u0_guess: StateVector,
    /// Periodic solves; `precondition` is the warm-start sweep count.
    pub newton: NewtonOptions,
    pub dual: DualOptions,
    /// Bound on the projected gradient of the Lagrangian.
    pub tol_opt: f64,
    /// Bound on `max_i |c_i|`.
    pub tol_con: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub lbfgs_memory: usize,
    /// Longest parameter step tried by the line search.
    pub max_step: f64,
    pub initial_penalty: f64,
}

impl<M: Model, Q: Qoi> OptProblem<M, Q> {
    pub fn new(map: DirkMap<M>, qoi: Q, objective: usize) -> Self {
        let dim = map.model().dim();
        Self {
            map,
            qoi,
            objective,
            constraints: Vec::new(),
            bounds: None,
            u0_guess: DVector::zeros(dim),
            newton: NewtonOptions {
                tol: 1e-10,
                gmres_tol: 1e-8,
                precondition: 5,
                ..NewtonOptions::default()
            },
            dual: DualOptions::new(crate::shooting::DualMethod::Gmres, 1e-10),
            tol_opt: 1e-6,
            tol_con: 1e-5,
            max_outer: 50,
            max_inner: 100,
            lbfgs_memory: 10,
            max_step: 1.0,
            initial_penalty: 1.0,
        }
    }

    pub fn with_constraint(mut self, index: usize, target: f64) -> Self {
        self.constraints.push((index, target));
        self
    }

    pub fn with_bounds(mut self, lo: ParamVector, hi: ParamVector) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    fn validate(&self) -> Result<()> {
        let nq = self.qoi.n_qoi();
        let n_mu = self.map.mu().len();
        if self.objective >= nq {
            return Err(Error::InvalidInput(format!("objective index {} out of range", self.objective)));
        }
        for &(q, target) in &self.constraints {
            if q >= nq || q == self.objective || !target.is_finite() {
                return Err(Error::InvalidInput(format!("invalid constraint on quantity {q}")));
            }
        }
        if let Some((lo, hi)) = &self.bounds {
            if lo.len() != n_mu || hi.len() != n_mu || lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
                return Err(Error::InvalidInput("bounds must satisfy lo <= hi componentwise".into()));
            }
        }
        if !(self.tol_opt > 0.0 && self.tol_con > 0.0 && self.max_step > 0.0 && self.initial_penalty > 0.0) {
            return Err(Error::InvalidInput("optimizer tolerances, step and penalty must be positive".into()));
        }
        Ok(())
    }

    fn project(&self, mu: &ParamVector) -> ParamVector {
        match &self.bounds {
            None => mu.clone(),
            Some((lo, hi)) => DVector::from_fn(mu.len(), |i, _| mu[i].clamp(lo[i], hi[i])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptStatus {
    Converged,
    MaxIterations,
    /// No acceptable step along the search direction.
    LineSearchFailed,
}

/// One accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptRecord {
    pub mu: ParamVector,
    pub objective: f64,
    /// `F_q - target` per constraint.
    pub constraints: Vec<f64>,
    /// Projected-gradient norm of the Lagrangian.
    pub optimality: f64,
    /// Empty when the problem is unconstrained.
    pub penalty: Option<f64>,
    pub multipliers: Vec<f64>,
    pub defect: f64,
    pub newton_iterations: usize,
    pub dual_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptHistory {
    pub records: Vec<OptRecord>,
    pub status: OptStatus,
    pub evaluations: usize,
    pub failed_evaluations: usize,
}

impl OptHistory {
    /// Rows of `iteration,objective,c0..,optimality,penalty,mu0..`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        let (nc, nm) = self
            .records
            .first()
            .map_or((0, 0), |r| (r.constraints.len(), r.mu.len()));
        let mut header = vec!["iteration".to_string(), "objective".to_string()];
        header.extend((0..nc).map(|i| format!("c{i}")));
        header.push("optimality".into());
        header.push("penalty".into());
        header.extend((0..nm).map(|i| format!("mu{i}")));
        header.push("defect".into());
        out.write_record(&header).map_err(csv_err)?;
        for (k, r) in self.records.iter().enumerate() {
            let mut rec = vec![k.to_string(), fmt_f64(r.objective)];
            rec.extend(r.constraints.iter().map(|&c| fmt_f64(c)));
            rec.push(fmt_f64(r.optimality));
            rec.push(r.penalty.map(fmt_f64).unwrap_or_default());
            rec.extend(r.mu.iter().map(|&m| fmt_f64(m)));
            rec.push(fmt_f64(r.defect));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Quantities and gradients at one periodic solution.
struct Evaluation {
    mu: ParamVector,
    u0: StateVector,
    values: DVector<f64>,
    grads: DMatrix<f64>,
    defect: f64,
    newton_iterations: usize,
    dual_iterations: usize,
}

struct Evaluator<'p, M, Q> {
    problem: &'p OptProblem<M, Q>,
    evaluations: usize,
    failures: usize,
}

impl<M: Model, Q: Qoi> Evaluator<'_, M, Q> {
    fn evaluate(&mut self, mu: &ParamVector, u_warm: &StateVector) -> Result<Evaluation> {
        self.evaluations += 1;
        let out = self.try_evaluate(mu, u_warm);
        if out.is_err() {
            self.failures += 1;
        }
        out
    }

    fn try_evaluate(&self, mu: &ParamVector, u_warm: &StateVector) -> Result<Evaluation> {
        let p = self.problem;
        let map = p.map.at(mu.clone())?;
        let sol = newton_krylov_solve(&map, u_warm, &p.newton)?.ensure_converged()?;
        let (value, grad, duals) = gradient_at_solution(&map, &p.qoi, &sol, &p.dual, p.newton.tol)?;
        Ok(Evaluation {
            mu: mu.clone(),
            u0: sol.u0.clone(),
            values: value.values,
            grads: grad.values,
            defect: sol.defect,
            newton_iterations: sol.report.iterations,
            dual_iterations: duals.iter().map(|d| d.report.iterations).sum(),
        })
    }
}

/// Augmented-Lagrangian state for the current outer iteration.
struct Merit<'a> {
    objective: usize,
    constraints: &'a [(usize, f64)],
    multipliers: &'a [f64],
    penalty: f64,
}

impl Merit<'_> {
    fn residuals(&self, e: &Evaluation) -> Vec<f64> {
        self.constraints.iter().map(|&(q, t)| e.values[q] - t).collect()
    }

    fn value(&self, e: &Evaluation) -> f64 {
        let c = self.residuals(e);
        let mut l = e.values[self.objective];
        for (ci, li) in c.iter().zip(self.multipliers) {
            l += -li * ci + 0.5 * self.penalty * ci * ci;
        }
        l
    }

    fn gradient(&self, e: &Evaluation) -> ParamVector {
        let c = self.residuals(e);
        let mut g: ParamVector = e.grads.row(self.objective).transpose();
        for ((&(q, _), ci), li) in self.constraints.iter().zip(&c).zip(self.multipliers) {
            g.axpy(self.penalty * ci - li, &e.grads.row(q).transpose(), 1.0);
        }
        g
    }
}

fn projected_gradient_norm<M: Model, Q: Qoi>(p: &OptProblem<M, Q>, mu: &ParamVector, g: &ParamVector) -> f64 {
    (p.project(&(mu - g)) - mu).norm()
}

/// Runs the augmented-Lagrangian loop (plain projected L-BFGS when there are
/// no constraints).
///
/// A trial point whose periodic solve fails is rejected and the step
/// halved. Each new trial is warm-started from the last accepted `u0`
/// followed by `newton.precondition` fixed-point sweeps.
pub fn optimize<M: Model, Q: Qoi>(problem: &OptProblem<M, Q>) -> Result<(ParamVector, OptHistory)> {
    problem.validate()?;
    let p = problem;
    let constrained = !p.constraints.is_empty();
    let mut ev = Evaluator {
        problem: p,
        evaluations: 0,
        failures: 0,
    };
    let mu0 = p.project(p.map.mu());
    let mut current = ev.evaluate(&mu0, &p.u0_guess).map_err(|e| e.labeled("initial periodic solve"))?;
    let mut multipliers = initial_multipliers(p, &current);
    let mut penalty = p.initial_penalty;
    let mut records = Vec::new();
    let mut status = OptStatus::MaxIterations;

    let record = |e: &Evaluation, multipliers: &[f64], penalty: f64, records: &mut Vec<OptRecord>| {
        let merit = Merit {
            objective: p.objective,
            constraints: &p.constraints,
            multipliers,
            penalty,
        };
        let g = merit.gradient(e);
        records.push(OptRecord {
            mu: e.mu.clone(),
            objective: e.values[p.objective],
            constraints: merit.residuals(e),
            optimality: projected_gradient_norm(p, &e.mu, &g),
            penalty: constrained.then_some(penalty),
            multipliers: if constrained { multipliers.to_vec() } else { Vec::new() },
            defect: e.defect,
            newton_iterations: e.newton_iterations,
            dual_iterations: e.dual_iterations,
        });
    };
    record(&current, &multipliers, penalty, &mut records);

    let max_violation = |e: &Evaluation| -> f64 {
        p.constraints
            .iter()
            .map(|&(q, t)| (e.values[q] - t).abs())
            .fold(0.0, f64::max)
    };
    let mut last_violation = max_violation(&current);

    // Subproblems are solved loosely at first and tightened geometrically.
    let mut inner_tol = if constrained {
        p.tol_opt.max(1e-2 * records[0].optimality)
    } else {
        p.tol_opt
    };
    'outer: for _outer in 0..p.max_outer.max(1) {
        let mut memory = LbfgsMemory::new(p.lbfgs_memory);
        for _inner in 0..p.max_inner {
            let merit = Merit {
                objective: p.objective,
                constraints: &p.constraints,
                multipliers: &multipliers,
                penalty,
            };
            let g = merit.gradient(&current);
            let pg = projected_gradient_norm(p, &current.mu, &g);
            // Inner loop stops at the optimality tolerance; feasibility is
            // driven by the multiplier and penalty updates.
            if pg <= inner_tol {
                break;
            }
            let Some(next) = line_search(p, &mut ev, &merit, &current, &g, &mut memory)? else {
                if memory.is_empty() {
                    status = OptStatus::LineSearchFailed;
                    break 'outer;
                }
                memory.clear();
                continue;
            };
            let g_next = merit.gradient(&next);
            let s = &next.mu - &current.mu;
            // Steps at the noise level of the gradient would wreck the
            // initial Hessian scaling.
            if s.norm() > 1e-8 * current.mu.norm().max(1.0) {
                memory.push(s, &g_next - &g);
            }
            current = next;
            record(&current, &multipliers, penalty, &mut records);
        }

        let violation = max_violation(&current);
        let merit = Merit {
            objective: p.objective,
            constraints: &p.constraints,
            multipliers: &multipliers,
            penalty,
        };
        let pg = projected_gradient_norm(p, &current.mu, &merit.gradient(&current));
        if pg <= p.tol_opt && violation <= p.tol_con {
            status = OptStatus::Converged;
            break;
        }
        if !constrained {
            break;
        }
        let c = merit.residuals(&current);
        for (l, ci) in multipliers.iter_mut().zip(&c) {
            *l -= penalty * ci;
        }
        // Once feasible to tolerance, a larger penalty only amplifies noise
        // in the constraint values.
        if violation > p.tol_con && violation > 0.25 * last_violation {
            penalty *= 10.0;
        }
        last_violation = violation;
        inner_tol = p.tol_opt.max(0.1 * inner_tol);
    }

    let mu = current.mu.clone();
    Ok((
        mu,
        OptHistory {
            records,
            status,
            evaluations: ev.evaluations,
            failed_evaluations: ev.failures,
        },
    ))
}

/// Van der Pol demo: minimize `E` with `J` held at its value at the
/// starting parameters `[-0.5, 0.8, 0.3]`, over the box
/// `[-0.6, -0.4] x [0, 3] x [-4, 4]`. `T = 5`, dirk3 on `n_t` steps.
pub fn vdp_demo_problem(n_t: usize) -> Result<OptProblem<ForcedVanDerPol, VdpQoi>> {
    let period = 5.0;
    let (model, qoi) = make_forced_vdp(period);
    let mu0 = DVector::from_vec(vec![-0.5, 0.8, 0.3]);
    let map = DirkMap::new(model, tableau_library("dirk3")?, TimeGrid::uniform(n_t, period)?, mu0.clone(), 1e-12)?;
    let baseline = NewtonOptions {
        tol: 1e-12,
        gmres_tol: 1e-10,
        precondition: 5,
        ..NewtonOptions::default()
    };
    let target = periodic_qoi(&map, &qoi, &mu0, &DVector::zeros(2), &baseline)?[1];
    let mut problem = OptProblem::new(map, qoi, 0)
        .with_constraint(1, target)
        .with_bounds(DVector::from_vec(vec![-0.6, 0.0, -4.0]), DVector::from_vec(vec![-0.4, 3.0, 4.0]));
    problem.newton.tol = 1e-11;
    problem.tol_con = 1e-6;
    Ok(problem)
}

/// Least-squares multipliers from `grad f = sum_i lambda_i grad c_i`.
fn initial_multipliers<M: Model, Q: Qoi>(p: &OptProblem<M, Q>, e: &Evaluation) -> Vec<f64> {
    if p.constraints.is_empty() {
        return Vec::new();
    }
    let n_mu = e.mu.len();
    let jac = DMatrix::from_fn(n_mu, p.constraints.len(), |i, k| e.grads[(p.constraints[k].0, i)]);
    let rhs: ParamVector = e.grads.row(p.objective).transpose();
    match jac.svd(true, true).solve(&rhs, 1e-12) {
        Ok(l) if l.iter().all(|x| x.is_finite()) => l.iter().copied().collect(),
        _ => vec![0.0; p.constraints.len()],
    }
}

/// Projected Armijo search along the L-BFGS direction. Returns `None` if no
/// acceptable point was found.
fn line_search<M: Model, Q: Qoi>(
    p: &OptProblem<M, Q>,
    ev: &mut Evaluator<'_, M, Q>,
    merit: &Merit<'_>,
    current: &Evaluation,
    g: &ParamVector,
    memory: &mut LbfgsMemory,
) -> Result<Option<Evaluation>> {
    let x = &current.mu;
    let free = |i: usize, d: f64| -> bool {
        match &p.bounds {
            None => true,
            Some((lo, hi)) => !((x[i] <= lo[i] && d < 0.0) || (x[i] >= hi[i] && d > 0.0)),
        }
    };
    // Variables held at a bound by the gradient are excluded from the
    // quasi-Newton direction.
    let active = DVector::from_fn(x.len(), |i, _| if free(i, -g[i]) { 1.0 } else { 0.0 });
    let g_free = g.component_mul(&active);
    let mut d = -memory.apply(&g_free).component_mul(&active);
    if !(g.dot(&d) < 0.0) {
        memory.clear();
        d = -g_free.clone();
    }
    let len = d.norm();
    if len == 0.0 {
        return Ok(None);
    }
    if len > p.max_step {
        d *= p.max_step / len;
    }
    let f0 = merit.value(current);
    let mut alpha = 1.0;
    for _ in 0..40 {
        let trial_mu = p.project(&(x + &d * alpha));
        let step = &trial_mu - x;
        if step.norm() <= 1e-14 * x.norm().max(1.0) {
            return Ok(None);
        }
        if let Ok(e) = ev.evaluate(&trial_mu, &current.u0) {
            if merit.value(&e) <= f0 + 1e-4 * g.dot(&step) {
                return Ok(Some(e));
            }
        }
        alpha *= 0.5;
    }
    Ok(None)
}
