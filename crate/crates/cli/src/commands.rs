//! One function per subcommand. Each writes its artifacts into the output
//! directory and reports whether the run reached its goal.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use periodic_adjoint::dirk::accumulate_qoi;
use periodic_adjoint::driver::{optimize, OptProblem, OptStatus};
use periodic_adjoint::floquet::{analyze_stability, FloquetOptions};
use periodic_adjoint::gradient::{grad_check, gradient_at_solution, periodic_qoi, write_grad_check_csv};
use periodic_adjoint::io::fmt_f64;
use periodic_adjoint::model::{Model, Qoi};
use periodic_adjoint::shooting::{
    dual_solve, fixed_point_solve, newton_krylov_solve, optimization_shooting_solve, Descent, DirkMap, DualMethod,
    DualOptions, NewtonOptions, OptShootingOptions, PeriodicSolution, SolveReport,
};
use rayon::prelude::*;

use crate::config::{DualMethodName, Method, RunConfig, SolverConfig};
use crate::error::CliError;
use crate::problem::{build, with_problem};

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub success: bool,
    pub timings: Vec<(String, f64)>,
    pub summary: Vec<String>,
}

impl Outcome {
    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push((label.into(), start.elapsed().as_secs_f64()));
        out
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn write_named_values(dir: &Path, name: &str, header: [&str; 2], rows: impl IntoIterator<Item = (String, f64)>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    w.write_record(header)?;
    for (k, v) in rows {
        w.write_record([k, fmt_f64(v)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_vector(dir: &Path, name: &str, v: &DVector<f64>) -> Result<(), CliError> {
    write_named_values(dir, name, ["index", "value"], v.iter().enumerate().map(|(i, &x)| (i.to_string(), x)))
}

fn newton_options(s: &SolverConfig) -> NewtonOptions {
    NewtonOptions {
        tol: s.tol,
        gmres_tol: s.gmres_tol,
        precondition: s.precondition,
        max_newton: s.max_iter.unwrap_or(20),
        ..NewtonOptions::default()
    }
}

fn dual_options(s: &SolverConfig) -> DualOptions {
    let method = match s.dual_method {
        DualMethodName::Gmres => DualMethod::Gmres,
        DualMethodName::FixedPoint => DualMethod::FixedPoint,
    };
    DualOptions::new(method, s.dual_tol)
}

fn guess<M: Model>(map: &DirkMap<M>, s: &SolverConfig) -> DVector<f64> {
    s.initial_guess
        .as_ref()
        .map_or_else(|| DVector::zeros(map.model().dim()), |g| DVector::from_vec(g.clone()))
}

/// Periodic solve with the configured method; non-convergence is reported
/// through the solution status.
fn solve<M: Model>(map: &DirkMap<M>, s: &SolverConfig) -> Result<PeriodicSolution, CliError> {
    let u0 = guess(map, s);
    let max_iter = s.max_iter.unwrap_or(1000);
    let sol = match s.method {
        Method::Newton => newton_krylov_solve(map, &u0, &newton_options(s))?,
        Method::FixedPoint => fixed_point_solve(map, &u0, s.tol, max_iter)?,
        Method::SteepestDescent | Method::Lbfgs => {
            let descent = if s.method == Method::Lbfgs {
                Descent::Lbfgs { memory: s.lbfgs_memory }
            } else {
                Descent::SteepestDescent
            };
            let mut opts = OptShootingOptions::new(s.tol, descent);
            opts.max_iter = max_iter;
            optimization_shooting_solve(map, &u0, &opts)?
        }
    };
    Ok(sol)
}

fn write_solution(dir: &Path, sol: &PeriodicSolution) -> Result<(), CliError> {
    write_vector(dir, "u0.csv", &sol.u0)?;
    sol.report.write_csv(create(dir, "solve_report.csv")?)?;
    Ok(())
}

fn solve_summary(report: &SolveReport) -> String {
    format!(
        "{}: {:?} after {} iterations, defect {:e}",
        report.method,
        report.status,
        report.iterations,
        report.final_defect()
    )
}

/// Solves for a periodic orbit and fails unless it converged.
fn converged_solution<M: Model>(map: &DirkMap<M>, ctx: &Context, outcome: &mut Outcome) -> Result<PeriodicSolution, CliError> {
    let sol = outcome.time("primal", || solve(map, &ctx.config.solver))?;
    write_solution(&ctx.out, &sol)?;
    outcome.summary.push(solve_summary(&sol.report));
    Ok(sol.ensure_converged()?)
}

pub fn solve_periodic(ctx: &Context) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    with_problem!(build(&ctx.config)?, |map, _qoi| {
        let sol = outcome.time("primal", || solve(&map, &ctx.config.solver))?;
        write_solution(&ctx.out, &sol)?;
        sol.trajectory.write_csv(create(&ctx.out, "trajectory.csv")?)?;
        sol.trajectory.write_binary(create(&ctx.out, "trajectory.bin")?)?;
        outcome.summary.push(solve_summary(&sol.report));
        outcome.success = sol.report.converged();
    });
    Ok(outcome)
}

pub fn adjoint(ctx: &Context) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    with_problem!(build(&ctx.config)?, |map, qoi| {
        let sol = converged_solution(&map, ctx, &mut outcome)?;
        let value = accumulate_qoi(&qoi, &sol.trajectory, map.mu())?;
        write_named_values(&ctx.out, "qoi.csv", ["qoi", "value"], (0..qoi.n_qoi()).map(|q| (qoi.name(q), value.values[q])))?;
        let opts = dual_options(&ctx.config.solver);
        let duals = outcome.time("dual", || {
            (0..qoi.n_qoi())
                .into_par_iter()
                .map(|q| dual_solve(&map, &sol.trajectory, &value, q, &opts))
                .collect::<Result<Vec<_>, _>>()
        })?;
        for (q, d) in duals.iter().enumerate() {
            let name = qoi.name(q);
            d.dual.write_csv(create(&ctx.out, &format!("dual_{name}.csv"))?)?;
            d.dual.write_binary(create(&ctx.out, &format!("dual_{name}.bin"))?)?;
            d.report.write_csv(create(&ctx.out, &format!("dual_report_{name}.csv"))?)?;
            outcome.summary.push(format!("dual {name}: {} iterations, bc residual {:e}", d.report.iterations, d.bc_residual));
        }
        outcome.success = true;
    });
    Ok(outcome)
}

pub fn gradient(ctx: &Context) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    with_problem!(build(&ctx.config)?, |map, qoi| {
        let sol = converged_solution(&map, ctx, &mut outcome)?;
        let opts = dual_options(&ctx.config.solver);
        let (value, grad, duals) =
            outcome.time("dual", || gradient_at_solution(&map, &qoi, &sol, &opts, ctx.config.solver.tol))?;
        write_named_values(&ctx.out, "qoi.csv", ["qoi", "value"], (0..qoi.n_qoi()).map(|q| (qoi.name(q), value.values[q])))?;
        grad.write_csv(create(&ctx.out, "gradient.csv")?)?;
        for (q, d) in duals.iter().enumerate() {
            d.report.write_csv(create(&ctx.out, &format!("dual_report_{}.csv", qoi.name(q)))?)?;
        }
        for q in 0..qoi.n_qoi() {
            let row: Vec<String> = grad.values.row(q).iter().map(|x| format!("{x:.6e}")).collect();
            outcome.summary.push(format!("d{}/dmu = [{}]", qoi.name(q), row.join(", ")));
        }
        outcome.success = true;
    });
    Ok(outcome)
}

pub fn grad_check_cmd(ctx: &Context) -> Result<Outcome, CliError> {
    let s = &ctx.config.solver;
    if s.tol > 1e-12 {
        return Err(CliError::Config(format!(
            "solver.tol: grad-check needs periodic solves to 1e-12 or tighter, got {:e}",
            s.tol
        )));
    }
    let mut outcome = Outcome::default();
    with_problem!(build(&ctx.config)?, |map, qoi| {
        let sol = converged_solution(&map, ctx, &mut outcome)?;
        let (_, grad, _) = outcome.time("dual", || gradient_at_solution(&map, &qoi, &sol, &dual_options(s), s.tol))?;
        grad.write_csv(create(&ctx.out, "gradient.csv")?)?;
        let newton = NewtonOptions {
            precondition: s.precondition.max(5),
            ..newton_options(s)
        };
        let rows = outcome.time("finite_differences", || {
            grad_check(&map, &qoi, &sol.u0, &grad, &ctx.config.grad_check.taus, &newton)
        })?;
        write_grad_check_csv(create(&ctx.out, "grad_check.csv")?, &rows)?;
        for q in 0..qoi.n_qoi() {
            for p in 0..map.mu().len() {
                let best = rows
                    .iter()
                    .filter(|r| r.param == p && r.qoi == qoi.name(q))
                    .map(|r| r.rel_error)
                    .fold(f64::INFINITY, f64::min);
                outcome.summary.push(format!("{} mu{p}: best relative error {best:e}", qoi.name(q)));
            }
        }
        outcome.success = rows.iter().all(|r| r.rel_error.is_finite());
    });
    Ok(outcome)
}

pub fn floquet(ctx: &Context) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    with_problem!(build(&ctx.config)?, |map, _qoi| {
        let sol = converged_solution(&map, ctx, &mut outcome)?;
        let f = &ctx.config.floquet;
        let opts = FloquetOptions {
            k: f.k,
            tol: f.tol,
            margin: f.margin,
            seed: ctx.seed,
            ..FloquetOptions::default()
        };
        let rep = outcome.time("arnoldi", || analyze_stability(&map, &sol.trajectory, &opts))?;
        rep.write_csv(create(&ctx.out, "floquet.csv")?)?;
        outcome.summary.push(format!(
            "spectral radius {:.12}, stable {:?}, {} matvecs",
            rep.spectral_radius, rep.stable, rep.matvecs
        ));
        outcome.success = rep.stable.is_some();
    });
    Ok(outcome)
}

pub fn optimize_cmd(ctx: &Context) -> Result<Outcome, CliError> {
    let Some(o) = &ctx.config.optimize else {
        return Err(CliError::Config("optimize: the [optimize] section is required".into()));
    };
    let s = &ctx.config.solver;
    let mut outcome = Outcome::default();
    with_problem!(build(&ctx.config)?, |map, qoi| {
        let mu0 = map.mu().clone();
        let u0 = guess(&map, s);
        let mut targets = Vec::new();
        for c in &o.constraints {
            let target = match c.target {
                Some(t) => t,
                None => {
                    let baseline = NewtonOptions {
                        tol: s.tol.min(1e-12),
                        gmres_tol: 1e-10,
                        precondition: 5,
                        ..NewtonOptions::default()
                    };
                    periodic_qoi(&map, &qoi, &mu0, &u0, &baseline)?[c.qoi]
                }
            };
            targets.push((c.qoi, target));
        }
        let mut problem = OptProblem::new(map, qoi, o.objective);
        for (q, t) in targets {
            problem = problem.with_constraint(q, t);
        }
        if let (Some(lo), Some(hi)) = (&o.lower, &o.upper) {
            problem = problem.with_bounds(DVector::from_vec(lo.clone()), DVector::from_vec(hi.clone()));
        }
        problem.u0_guess = u0;
        problem.newton.tol = s.tol;
        problem.newton.gmres_tol = s.gmres_tol;
        problem.dual = dual_options(s);
        problem.tol_opt = o.tol_opt;
        problem.tol_con = o.tol_con;
        problem.max_outer = o.max_outer;
        problem.max_inner = o.max_inner;
        problem.max_step = o.max_step;
        problem.lbfgs_memory = s.lbfgs_memory;
        let (mu, hist) = outcome.time("optimize", || optimize(&problem))?;
        hist.write_csv(create(&ctx.out, "opt_history.csv")?)?;
        write_vector(&ctx.out, "mu_opt.csv", &mu)?;
        let last = hist.records.last().expect("history holds the initial point");
        outcome.summary.push(format!(
            "{:?} after {} iterates ({} evaluations): objective {:.10} -> {:.10}, optimality {:e}, constraints {:?}",
            hist.status,
            hist.records.len() - 1,
            hist.evaluations,
            hist.records[0].objective,
            last.objective,
            last.optimality,
            last.constraints
        ));
        outcome.success = hist.status == OptStatus::Converged;
    });
    Ok(outcome)
}

struct SweepRun {
    method: Method,
    tol: f64,
    newton: Option<(f64, usize)>,
}

impl SweepRun {
    fn label(&self) -> String {
        match self.newton {
            Some((eps, m)) => format!("{}_tol{:e}_eps{eps:e}_m{m}", self.method.label(), self.tol),
            None => format!("{}_tol{:e}", self.method.label(), self.tol),
        }
    }
}

pub fn sweep(ctx: &Context) -> Result<Outcome, CliError> {
    let sw = &ctx.config.sweep;
    let mut runs = Vec::new();
    for &method in &sw.methods {
        for &tol in &sw.tols {
            if method == Method::Newton {
                for &eps in &sw.gmres_tols {
                    for &m in &sw.preconditions {
                        runs.push(SweepRun { method, tol, newton: Some((eps, m)) });
                    }
                }
            } else {
                runs.push(SweepRun { method, tol, newton: None });
            }
        }
    }
    let dir = ctx.out.join("sweep");
    fs::create_dir_all(&dir)?;
    let mut outcome = Outcome::default();
    with_problem!(build(&ctx.config)?, |map, _qoi| {
        let results: Vec<Result<SolveReport, String>> = outcome.time("sweep", || {
            runs.par_iter()
                .map(|run| {
                    let mut s = ctx.config.solver.clone();
                    s.method = run.method;
                    s.tol = run.tol;
                    if let Some((eps, m)) = run.newton {
                        s.gmres_tol = eps;
                        s.precondition = m;
                    }
                    solve(&map, &s).map(|sol| sol.report).map_err(|e| e.to_string())
                })
                .collect()
        });
        let mut w = csv::Writer::from_writer(create(&ctx.out, "sweep.csv")?);
        w.write_record([
            "method",
            "tol",
            "gmres_tol",
            "precondition",
            "status",
            "iterations",
            "primal_evolutions",
            "sensitivity_evolutions",
            "matvecs",
            "final_defect",
        ])?;
        for (run, res) in runs.iter().zip(&results) {
            let (eps, m) = run
                .newton
                .map_or((String::new(), String::new()), |(e, m)| (fmt_f64(e), m.to_string()));
            let mut rec = vec![run.method.label().to_string(), fmt_f64(run.tol), eps, m];
            match res {
                Ok(rep) => {
                    rep.write_csv(create(&dir, &format!("{}.csv", run.label()))?)?;
                    rec.extend([
                        if rep.converged() { "converged" } else { "max-iterations" }.to_string(),
                        rep.iterations.to_string(),
                        rep.primal_evolutions.to_string(),
                        rep.sensitivity_evolutions.to_string(),
                        rep.matvecs().to_string(),
                        fmt_f64(rep.final_defect()),
                    ]);
                    outcome.summary.push(format!("{}: {:?} in {} iterations", run.label(), rep.status, rep.iterations));
                }
                Err(e) => {
                    rec.extend(["failed".to_string(), String::new(), String::new(), String::new(), String::new(), String::new()]);
                    outcome.summary.push(format!("{}: failed: {e}", run.label()));
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        outcome.success = true;
    });
    Ok(outcome)
}
