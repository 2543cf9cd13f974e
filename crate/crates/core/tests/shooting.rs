mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use periodic_adjoint::dirk::{accumulate_qoi, tableau_library, TimeGrid, Trajectory};
use periodic_adjoint::gradient::{affine_period_map, dense_oracle_linear};
use periodic_adjoint::model::{make_linear_periodic, Basis, ForcingTerm, LinearPeriodic, QuadraticQoi, StateVector};
use periodic_adjoint::sensitivity::{DualTrajectory, QoiSource};
use periodic_adjoint::shooting::{
    dual_solve, fixed_point_solve, newton_krylov_solve, optimization_shooting_solve, Descent, DirkMap, DualMethod,
    DualOptions, Linearized, NewtonOptions, OptShootingOptions, PeriodMap,
};
use periodic_adjoint::Result;

fn linear_map(model: LinearPeriodic, mu: DVector<f64>, n_t: usize, tableau: &str) -> DirkMap<LinearPeriodic> {
    let period = periodic_adjoint::model::Model::period(&model);
    DirkMap::new(model, tableau_library(tableau).unwrap(), TimeGrid::uniform(n_t, period).unwrap(), mu, 1e-13).unwrap()
}

fn newton(tol: f64, gmres_tol: f64, precondition: usize) -> NewtonOptions {
    NewtonOptions {
        tol,
        gmres_tol,
        precondition,
        ..Default::default()
    }
}

#[derive(Default)]
struct Counters {
    evolves: AtomicUsize,
    forwards: AtomicUsize,
    adjoint_sweeps: AtomicUsize,
    adjoint_applies: AtomicUsize,
}

/// Wraps a period map and counts every callback.
struct Counting<P> {
    inner: P,
    calls: Counters,
}

struct CountingLinearized<'t, L> {
    inner: L,
    calls: &'t Counters,
}

impl<L: Linearized> Linearized for CountingLinearized<'_, L> {
    fn forward(&self, v: &StateVector) -> Result<StateVector> {
        self.calls.forwards.fetch_add(1, Ordering::Relaxed);
        self.inner.forward(v)
    }

    fn adjoint(&self, lambda_final: &StateVector, source: Option<QoiSource<'_>>) -> Result<DualTrajectory> {
        self.calls.adjoint_sweeps.fetch_add(1, Ordering::Relaxed);
        self.inner.adjoint(lambda_final, source)
    }

    fn adjoint_apply(&self, v: &StateVector) -> Result<StateVector> {
        self.calls.adjoint_applies.fetch_add(1, Ordering::Relaxed);
        self.inner.adjoint_apply(v)
    }
}

impl<P: PeriodMap> PeriodMap for Counting<P> {
    type Linearized<'t>
        = CountingLinearized<'t, P::Linearized<'t>>
    where
        Self: 't;

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evolve(&self, u0: &StateVector) -> Result<Trajectory> {
        self.calls.evolves.fetch_add(1, Ordering::Relaxed);
        self.inner.evolve(u0)
    }

    fn linearize<'t>(&'t self, trajectory: &'t Trajectory) -> Result<Self::Linearized<'t>> {
        Ok(CountingLinearized {
            inner: self.inner.linearize(trajectory)?,
            calls: &self.calls,
        })
    }
}

impl<P> Counting<P> {
    fn new(inner: P) -> Self {
        Self {
            inner,
            calls: Counters::default(),
        }
    }

    fn take(&self) -> (usize, usize, usize, usize) {
        (
            self.calls.evolves.swap(0, Ordering::Relaxed),
            self.calls.forwards.swap(0, Ordering::Relaxed),
            self.calls.adjoint_sweeps.swap(0, Ordering::Relaxed),
            self.calls.adjoint_applies.swap(0, Ordering::Relaxed),
        )
    }
}

#[test]
fn zero_dynamics_are_already_periodic() {
    let map = linear_map(zero_model(3), DVector::zeros(0), 10, "dirk3");
    let guess = DVector::from_vec(vec![0.3, -1.0, 2.0]);
    let fp = fixed_point_solve(&map, &guess, 1e-12, 10).unwrap();
    assert_eq!(fp.report.iterations, 0);
    assert_eq!(fp.u0, guess);
    assert_eq!(fp.defect, 0.0);
    let nk = newton_krylov_solve(&map, &guess, &newton(1e-12, 1e-3, 0)).unwrap();
    assert_eq!(nk.report.iterations, 0);
    for method in [Descent::SteepestDescent, Descent::Lbfgs { memory: 5 }] {
        let opt = optimization_shooting_solve(&map, &guess, &OptShootingOptions::new(1e-12, method)).unwrap();
        assert_eq!(opt.report.iterations, 0);
    }
}

#[test]
fn scalar_relaxation_contracts_by_scheme_amplification() {
    // u' = -u + 1 with T = 5: the fixed point is u = 1 for every scheme, and
    // the defect contracts by the one-period amplification Phi.
    let model = steady_model(5.0);
    let mu = DVector::from_element(1, 1.0);
    for (name, n_t) in [("backward-euler", 10), ("sdirk2", 10), ("dirk3", 20)] {
        let map = linear_map(model.clone(), mu.clone(), n_t, name);
        let oracle = dense_oracle_linear(&model, map.tableau(), map.grid(), &mu, 1e-14).unwrap();
        assert!((oracle.u0[0] - 1.0).abs() <= 1e-12);
        let phi = oracle.phi[(0, 0)];
        let sol = fixed_point_solve(&map, &DVector::zeros(1), 1e-12, 200).unwrap().ensure_converged().unwrap();
        assert!((sol.u0[0] - oracle.u0[0]).abs() <= 1e-11);
        // Stage solves are only accurate to their 1e-13 tolerance.
        let d = sol.report.defects();
        for w in d.windows(2) {
            assert!((w[1] - phi.abs() * w[0]).abs() <= 1e-6 * w[1] + 1e-12, "{name}: ratio {} vs {phi} in {d:?}", w[1] / w[0]);
        }
    }
}

/// `A = P diag(-ln 2, -1.5, -2.5, -3) P^-1` on `T = 1`: the dominant
/// multiplier is close to 0.5 and real.
fn half_contraction() -> (LinearPeriodic, DVector<f64>) {
    let p = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.2, 0.0, -0.1, //
        0.1, 1.0, 0.3, 0.0, //
        0.0, -0.2, 1.0, 0.2, //
        0.3, 0.0, 0.1, 1.0,
    ]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-(2f64.ln()), -1.5, -2.5, -3.0]));
    let a = &p * d * p.clone().try_inverse().unwrap();
    let forcing = vec![
        ForcingTerm::new(DVector::from_vec(vec![1.0, 0.0, 0.5, 0.0]), Basis::Constant),
        ForcingTerm::new(DVector::from_vec(vec![0.0, 1.0, 0.0, -1.0]), Basis::Sin(1)),
    ];
    (make_linear_periodic(a, forcing, None, 1.0).unwrap(), DVector::from_vec(vec![1.0, 2.0]))
}

#[test]
fn fixed_point_defect_ratio_approaches_spectral_radius() {
    let (model, mu) = half_contraction();
    let map = linear_map(model.clone(), mu.clone(), 40, "dirk3");
    let oracle = dense_oracle_linear(&model, map.tableau(), map.grid(), &mu, 1e-14).unwrap();
    let rho = oracle.eigenvalues()[0].norm();
    assert!((rho - 0.5).abs() < 1e-3);
    let sol = fixed_point_solve(&map, &DVector::zeros(4), 1e-12, 200).unwrap().ensure_converged().unwrap();
    assert!(rel_err(&sol.u0, &oracle.u0) <= 1e-11);
    let d = sol.report.defects();
    let k = d.iter().position(|&x| x < 1e-8).unwrap();
    let ratio = d[k] / d[k - 1];
    assert!((ratio - rho).abs() <= 1e-4, "ratio {ratio} vs {rho}");
}

#[test]
fn newton_takes_one_step_on_affine_maps() {
    for seed in 0..3 {
        let (model, mu) = random_linear(60 + seed, 8, (0.3, 2.0), seed == 1);
        let map = linear_map(model.clone(), mu.clone(), 30, "dirk3");
        let sol = newton_krylov_solve(&map, &DVector::zeros(8), &newton(1e-10, 1e-12, 0)).unwrap();
        assert!(sol.report.converged());
        assert_eq!(sol.report.iterations, 1);
        assert!(sol.defect <= 1e-10);
    }
}

#[test]
fn newton_matches_dense_oracle_on_random_instances() {
    let mut r = rng(70);
    for case in 0..10u64 {
        let n = 5 + (rand::Rng::random_range(&mut r, 0..46usize));
        let (model, mu) = random_linear(100 + case, n, (0.2, 2.0), case % 3 == 0);
        let map = linear_map(model.clone(), mu.clone(), 20, "dirk3");
        let oracle = dense_oracle_linear(&model, map.tableau(), map.grid(), &mu, 1e-14).unwrap();
        let rho = oracle.eigenvalues()[0].norm();
        assert!(rho > 0.1 && rho < 0.95, "case {case}: rho {rho}");
        let sol = newton_krylov_solve(&map, &DVector::zeros(n), &newton(1e-12, 1e-12, 0)).unwrap().ensure_converged().unwrap();
        assert!((&sol.u0 - &oracle.u0).norm() <= 1e-10, "case {case}");
    }
}

#[test]
fn newton_converges_superlinearly_on_vdp() {
    let (map, _) = vdp_map(100);
    let sol = newton_krylov_solve(&map, &DVector::zeros(2), &newton(1e-10, 1e-6, 0)).unwrap();
    assert!(sol.report.converged());
    assert!(sol.report.iterations <= 10);
    // Drop steps that land on the roundoff floor.
    let d: Vec<f64> = sol.report.defects().into_iter().filter(|&x| x > 1e-13).collect();
    let tail = &d[d.len() - 4..];
    for w in tail.windows(2) {
        assert!(w[1] <= 10.0 * w[0] * w[0], "not quadratic: {d:?}");
    }
    let pre = newton_krylov_solve(&map, &DVector::zeros(2), &newton(1e-10, 1e-6, 5)).unwrap();
    assert!(pre.report.converged());
    assert_eq!(pre.report.precondition_sweeps, 5);
    assert!(pre.report.iterations <= sol.report.iterations);
}

#[test]
fn all_methods_agree_on_vdp() {
    let (map, _) = vdp_map(100);
    let tol = 1e-8;
    let guess = DVector::zeros(2);
    let solutions = [
        fixed_point_solve(&map, &guess, tol, 500).unwrap(),
        newton_krylov_solve(&map, &guess, &newton(tol, 1e-6, 0)).unwrap(),
        optimization_shooting_solve(&map, &guess, &OptShootingOptions::new(tol, Descent::SteepestDescent)).unwrap(),
        optimization_shooting_solve(&map, &guess, &OptShootingOptions::new(tol, Descent::Lbfgs { memory: 10 })).unwrap(),
    ];
    for s in &solutions {
        assert!(s.report.converged(), "{}", s.report.method);
        assert!(s.defect <= tol);
        assert_eq!(s.trajectory.initial(), &s.u0);
        let again = map.evolve(&s.u0).unwrap();
        assert_eq!(again.states, s.trajectory.states);
    }
    for a in &solutions {
        for b in &solutions {
            let dist = (&a.u0 - &b.u0).norm();
            assert!(dist <= 10.0 * tol, "{} vs {}: {dist:e}", a.report.method, b.report.method);
        }
    }
    let iters: Vec<usize> = solutions.iter().map(|s| s.report.iterations).collect();
    assert!(iters[1] <= iters[3] && iters[3] <= iters[2], "{iters:?}");
}

#[test]
fn shooting_objective_gradient_matches_dense_monodromy() {
    let (model, mu) = random_linear(80, 6, (0.3, 2.0), true);
    let map = linear_map(model.clone(), mu.clone(), 25, "dirk3");
    let (phi, c) = affine_period_map(&model, map.tableau(), map.grid(), &mu, 1e-14).unwrap();
    let u0 = random_vector(&mut rng(81), 6);
    let traj = map.evolve(&u0).unwrap();
    let r = traj.defect();
    assert!(rel_err(&r, &(&phi * &u0 + &c - &u0)) <= 1e-12);
    let lin = map.linearize(&traj).unwrap();
    let grad = lin.adjoint_apply(&r).unwrap() - &r;
    let exact = (&phi - DMatrix::identity(6, 6)).transpose() * &r;
    assert!(rel_err(&grad, &exact) <= 1e-10);
}

#[test]
fn optimization_shooting_reaches_oracle_on_linear_model() {
    let (model, mu) = random_linear(82, 6, (0.5, 2.0), false);
    let map = linear_map(model.clone(), mu.clone(), 25, "sdirk2");
    let oracle = dense_oracle_linear(&model, map.tableau(), map.grid(), &mu, 1e-14).unwrap();
    let inv_norm = (DMatrix::identity(6, 6) - &oracle.phi).try_inverse().unwrap().norm();
    for method in [Descent::SteepestDescent, Descent::Lbfgs { memory: 5 }] {
        let sol = optimization_shooting_solve(&map, &DVector::zeros(6), &OptShootingOptions::new(1e-10, method))
            .unwrap()
            .ensure_converged()
            .unwrap();
        assert!((&sol.u0 - &oracle.u0).norm() <= inv_norm * 1e-10 * 1.01, "{method:?}");
    }
}

/// `F = int c^T u dt` on a random linear model with its periodic solution.
fn linear_dual_setup(seed: u64) -> (DirkMap<LinearPeriodic>, QuadraticQoi, Trajectory) {
    let (model, mu) = random_linear(seed, 7, (0.3, 2.0), seed % 2 == 0);
    let map = linear_map(model, mu, 30, "dirk3");
    let mut r = rng(seed + 1);
    let qoi = QuadraticQoi::linear(random_vector(&mut r, 7)).with_term(
        random_vector(&mut r, 7),
        Some(DMatrix::identity(7, 7) * 0.5),
        None,
    );
    let sol = newton_krylov_solve(&map, &DVector::zeros(7), &newton(1e-12, 1e-12, 0)).unwrap().ensure_converged().unwrap();
    (map, qoi, sol.trajectory)
}

#[test]
fn dual_solution_matches_dense_oracle() {
    for seed in [90, 91] {
        let (map, qoi, traj) = linear_dual_setup(seed);
        let (phi, _) = affine_period_map(map.model(), map.tableau(), map.grid(), map.mu(), 1e-14).unwrap();
        let value = accumulate_qoi(&qoi, &traj, map.mu()).unwrap();
        let lin = map.linearize(&traj).unwrap();
        for q in 0..2 {
            let d = lin.adjoint(&DVector::zeros(7), Some(QoiSource { value: &value, index: q })).unwrap();
            let g = value.du[traj.n_steps()].column(q).into_owned();
            let exact = (DMatrix::identity(7, 7) - phi.transpose()).lu().solve(&(d.initial() + &g)).unwrap();
            for method in [DualMethod::Gmres, DualMethod::FixedPoint] {
                let sol = dual_solve(&map, &traj, &value, q, &DualOptions::new(method, 1e-12)).unwrap();
                assert!(rel_err(&sol.lambda_final, &exact) <= 1e-10, "seed {seed} q{q} {method:?}");
                assert!(sol.bc_residual <= 1e-10 * exact.norm());
                assert_eq!(sol.dual.terminal(), &sol.lambda_final);
            }
        }
    }
}

#[test]
fn dual_gmres_converges_on_periodic_orbits() {
    let (map, qoi) = vdp_map(100);
    let sol = newton_krylov_solve(&map, &DVector::zeros(2), &newton(1e-11, 1e-10, 5)).unwrap().ensure_converged().unwrap();
    let value = accumulate_qoi(&qoi, &sol.trajectory, map.mu()).unwrap();
    for q in 0..2 {
        let g = dual_solve(&map, &sol.trajectory, &value, q, &DualOptions::new(DualMethod::Gmres, 1e-4)).unwrap();
        let f = dual_solve(&map, &sol.trajectory, &value, q, &DualOptions::new(DualMethod::FixedPoint, 1e-4)).unwrap();
        assert!(g.report.converged() && f.report.converged());
        assert!(g.report.iterations <= f.report.iterations, "q{q}: {} vs {}", g.report.iterations, f.report.iterations);
    }
}

#[test]
fn dual_reports_failure_when_operator_is_singular() {
    let map = linear_map(zero_model(2), DVector::zeros(0), 5, "dirk3");
    let traj = map.evolve(&DVector::zeros(2)).unwrap();
    let qoi = QuadraticQoi::linear(DVector::from_vec(vec![1.0, 0.0]));
    let value = accumulate_qoi(&qoi, &traj, map.mu()).unwrap();
    assert!(dual_solve(&map, &traj, &value, 0, &DualOptions::new(DualMethod::Gmres, 1e-8)).is_err());
    assert!(dual_solve(&map, &traj, &value, 0, &DualOptions::new(DualMethod::FixedPoint, 1e-8)).is_err());
}

#[test]
fn report_counters_equal_callback_invocations() {
    let (inner, qoi) = vdp_map(100);
    let map = Counting::new(inner);
    let guess = DVector::zeros(2);

    let fp = fixed_point_solve(&map, &guess, 1e-8, 500).unwrap();
    assert_eq!(map.take(), (fp.report.primal_evolutions, 0, 0, 0));

    let nk = newton_krylov_solve(&map, &guess, &newton(1e-11, 1e-8, 3)).unwrap();
    let (e, f, s, a) = map.take();
    assert_eq!((e, s, a), (nk.report.primal_evolutions, 0, 0));
    assert_eq!(f, nk.report.sensitivity_evolutions);
    assert_eq!(f, nk.report.matvecs());
    assert_eq!(f, nk.report.inner.iter().map(|k| k.matvecs).sum::<usize>());
    assert_eq!(e, 1 + nk.report.precondition_sweeps + nk.report.iterations);

    for method in [Descent::SteepestDescent, Descent::Lbfgs { memory: 4 }] {
        let opt = optimization_shooting_solve(&map, &guess, &OptShootingOptions::new(1e-8, method)).unwrap();
        let (e, f, s, a) = map.take();
        assert_eq!((e, f, s), (opt.report.primal_evolutions, 0, 0));
        assert_eq!(a, opt.report.sensitivity_evolutions);
    }

    let value = accumulate_qoi(&qoi, &nk.trajectory, map.inner.mu()).unwrap();
    for method in [DualMethod::Gmres, DualMethod::FixedPoint] {
        let d = dual_solve(&map, &nk.trajectory, &value, 0, &DualOptions::new(method, 1e-8)).unwrap();
        let (e, f, s, a) = map.take();
        assert_eq!((e, f), (0, 0));
        assert_eq!(s, 2);
        assert_eq!(s + a, d.report.sensitivity_evolutions);
    }
}

#[test]
fn solve_report_csv_layout() {
    let (map, _) = vdp_map(40);
    let sol = newton_krylov_solve(&map, &DVector::zeros(2), &newton(1e-10, 1e-6, 2)).unwrap();
    let mut buf = Vec::new();
    sol.report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,defect,inner_iterations,cumulative_matvecs"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), sol.report.history.len());
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], i.to_string());
        assert_eq!(row[1].parse::<f64>().unwrap(), sol.report.history[i].defect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fixed_point_and_newton_agree_on_linear_models(seed in 0u64..1000, n in 2usize..12) {
        let (model, mu) = random_linear(seed, n, (0.5, 2.0), seed % 2 == 0);
        let map = linear_map(model, mu, 15, "sdirk2");
        let tol = 1e-10;
        let fp = fixed_point_solve(&map, &DVector::zeros(n), tol, 1000).unwrap();
        let nk = newton_krylov_solve(&map, &DVector::zeros(n), &newton(tol, 1e-12, 0)).unwrap();
        prop_assert!(fp.report.converged() && nk.report.converged());
        prop_assert!(fp.defect <= tol && nk.defect <= tol);
        prop_assert!((&fp.u0 - &nk.u0).norm() <= 10.0 * tol);
    }
}
