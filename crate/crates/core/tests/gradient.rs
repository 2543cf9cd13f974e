mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use periodic_adjoint::dirk::{accumulate_qoi, evolve, tableau_library, TimeGrid};
use periodic_adjoint::gradient::{
    dense_oracle_linear, grad_check, periodic_gradient, write_grad_check_csv, GradientOptions, GradientResult,
};
use periodic_adjoint::model::{LinearPeriodic, Model, Qoi, QuadraticQoi};
use periodic_adjoint::shooting::{DirkMap, DualMethod, DualOptions, NewtonOptions};

fn tight() -> GradientOptions {
    GradientOptions {
        newton: NewtonOptions {
            tol: 1e-12,
            gmres_tol: 1e-10,
            precondition: 5,
            ..Default::default()
        },
        dual: DualOptions::new(DualMethod::Gmres, 1e-12),
    }
}

#[test]
fn steady_state_integral_has_gradient_period() {
    // u' = -u + mu is periodic at u = mu, so F = int u dt = 5 mu.
    let model = steady_model(5.0);
    let map = DirkMap::new(
        model,
        tableau_library("dirk3").unwrap(),
        TimeGrid::uniform(20, 5.0).unwrap(),
        DVector::from_element(1, 0.7),
        1e-13,
    )
    .unwrap();
    let qoi = QuadraticQoi::linear(DVector::from_element(1, 1.0));
    let res = periodic_gradient(&map, &qoi, &DVector::zeros(1), &tight()).unwrap();
    assert!((res.qoi.values[0] - 3.5).abs() <= 1e-10);
    assert!((res.gradient.values[(0, 0)] - 5.0).abs() <= 1e-10);
}

/// Quantities on the dense-oracle periodic solution. Everything is
/// quadratic in `mu`, so a central difference of any width is exact.
fn oracle_quantities(map: &DirkMap<LinearPeriodic>, qoi: &QuadraticQoi, mu: &DVector<f64>) -> DVector<f64> {
    let oracle = dense_oracle_linear(map.model(), map.tableau(), map.grid(), mu, 1e-14).unwrap();
    let traj = evolve(map.model(), map.tableau(), map.grid(), mu, &oracle.u0, 1e-14).unwrap();
    accumulate_qoi(qoi, &traj, mu).unwrap().values
}

fn quadratic_qoi(n: usize, seed: u64) -> QuadraticQoi {
    let mut r = rng(seed);
    let q = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut r, -0.5..0.5));
    QuadraticQoi::linear(random_vector(&mut r, n))
        .with_term(random_vector(&mut r, n), Some(q), None)
        .with_term(DVector::zeros(n), None, Some((random_vector(&mut r, 3), random_vector(&mut r, n))))
}

#[test]
fn linear_model_gradient_matches_dense_oracle() {
    for (seed, mass, tab) in [(200, false, "dirk3"), (201, true, "sdirk2"), (202, true, "backward-euler")] {
        let (model, mu) = random_linear(seed, 6, (0.3, 2.0), mass);
        let map = DirkMap::new(model, tableau_library(tab).unwrap(), TimeGrid::uniform(30, 1.0).unwrap(), mu.clone(), 1e-13)
            .unwrap();
        let qoi = quadratic_qoi(6, seed + 10);
        let res = periodic_gradient(&map, &qoi, &DVector::zeros(6), &tight()).unwrap();
        let base = oracle_quantities(&map, &qoi, &mu);
        assert!(rel_err(&res.qoi.values, &base) <= 1e-10);
        for p in 0..3 {
            let mut plus = mu.clone();
            plus[p] += 1.0;
            let mut minus = mu.clone();
            minus[p] -= 1.0;
            let fd = (oracle_quantities(&map, &qoi, &plus) - oracle_quantities(&map, &qoi, &minus)) / 2.0;
            for q in 0..qoi.n_qoi() {
                let adj = res.gradient.values[(q, p)];
                let scale = fd.amax().max(1.0);
                assert!((adj - fd[q]).abs() <= 1e-9 * scale, "{tab} q{q} mu{p}: {adj} vs {}", fd[q]);
            }
        }
    }
}

fn vdp_gradient() -> (DirkMap<periodic_adjoint::model::ForcedVanDerPol>, periodic_adjoint::model::VdpQoi, GradientResult) {
    let (map, qoi) = vdp_map(100);
    let res = periodic_gradient(&map, &qoi, &DVector::zeros(2), &tight()).unwrap();
    (map, qoi, res)
}

#[test]
fn vdp_gradient_matches_finite_differences() {
    let (map, qoi, res) = vdp_gradient();
    assert!(res.solution.defect <= 1e-12);
    for d in &res.duals {
        assert!(d.bc_residual <= 1e-9 * d.lambda_final.norm().max(1.0));
    }
    let taus = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
    let rows = grad_check(&map, &qoi, &res.solution.u0, &res.gradient, &taus, &tight().newton).unwrap();
    assert_eq!(rows.len(), 3 * taus.len() * 2);
    for (qi, q) in ["E", "J"].into_iter().enumerate() {
        let row_max = res.gradient.values.row(qi).amax();
        for p in 0..3 {
            let sel: Vec<_> = rows.iter().filter(|r| r.param == p && r.qoi == q).collect();
            let adj = sel[0].adjoint_value;
            if adj.abs() <= 1e-6 * row_max {
                // E is invariant under a shift of the forcing phase.
                assert_eq!((q, p), ("E", 2));
                assert!(sel.iter().take(5).all(|r| (r.fd_value - adj).abs() <= 1e-8 * row_max));
                continue;
            }
            let errs: Vec<f64> = sel.iter().map(|r| r.rel_error).collect();
            assert!(errs[4] <= 1e-5, "{q} mu{p}: {errs:?}");
            // Truncation falls at second order before roundoff takes over.
            let order = observed_order(&taus[..3], &errs[..3]);
            assert!(order >= 1.8, "{q} mu{p}: order {order} from {errs:?}");
            let best = errs.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(errs[6] > 10.0 * best, "{q} mu{p}: no roundoff rise in {errs:?}");
        }
    }
}

#[test]
fn burgers_gradient_matches_finite_differences() {
    for (dense, mass) in [(true, false), (false, true)] {
        let (map, qoi) = burgers_map(32, 40, dense, mass);
        let res = periodic_gradient(&map, &qoi, &DVector::zeros(32), &tight()).unwrap();
        let rows = grad_check(&map, &qoi, &res.solution.u0, &res.gradient, &[1e-4, 1e-5, 1e-6], &tight().newton).unwrap();
        for p in 0..3 {
            for q in 0..qoi.n_qoi() {
                let best = rows
                    .iter()
                    .filter(|r| r.param == p && r.qoi == qoi.name(q))
                    .map(|r| r.rel_error)
                    .fold(f64::INFINITY, f64::min);
                assert!(best <= 1e-5, "dense={dense} mass={mass} q{q} mu{p}: {best:e}");
            }
        }
    }
}

#[test]
fn fixed_point_dual_gives_the_same_gradient() {
    let (map, qoi, res) = vdp_gradient();
    let mut opts = tight();
    opts.dual = DualOptions::new(DualMethod::FixedPoint, 1e-12);
    let other = periodic_gradient(&map, &qoi, &res.solution.u0, &opts).unwrap();
    let diff = (&other.gradient.values - &res.gradient.values).amax();
    assert!(diff <= 1e-9 * res.gradient.values.amax(), "{diff:e}");
}

fn csv_bytes(res: &GradientResult) -> Vec<u8> {
    let mut buf = Vec::new();
    res.gradient.write_csv(&mut buf).unwrap();
    res.solution.report.write_csv(&mut buf).unwrap();
    for d in &res.duals {
        d.report.write_csv(&mut buf).unwrap();
        d.dual.write_csv(&mut buf).unwrap();
    }
    buf
}

#[test]
fn gradient_outputs_are_bitwise_reproducible_across_thread_counts() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let (map, qoi) = vdp_map(60);
            let res = periodic_gradient(&map, &qoi, &DVector::zeros(2), &tight()).unwrap();
            let rows = grad_check(&map, &qoi, &res.solution.u0, &res.gradient, &[1e-5, 1e-6], &tight().newton).unwrap();
            let mut bytes = csv_bytes(&res);
            write_grad_check_csv(&mut bytes, &rows).unwrap();
            bytes
        })
    };
    let first = run(1);
    assert_eq!(first, run(1));
    assert_eq!(first, run(3));
}

#[test]
fn gradient_csv_layout() {
    let (_, _, res) = vdp_gradient();
    let mut buf = Vec::new();
    res.gradient.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "qoi,param,value");
    assert_eq!(lines.len(), 1 + 2 * 3);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[..2], ["E", "0"]);
    assert_eq!(first[2].parse::<f64>().unwrap(), res.gradient.values[(0, 0)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_gradient_matches_oracle_for_random_parameters(
        seed in 0u64..500,
        mu in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let (model, _) = random_linear(seed, 4, (0.4, 2.0), seed % 2 == 1);
        let mu = DVector::from_vec(mu);
        let map = DirkMap::new(model.clone(), tableau_library("sdirk2").unwrap(), TimeGrid::uniform(16, model.period()).unwrap(), mu.clone(), 1e-13).unwrap();
        let qoi = quadratic_qoi(4, seed);
        let res = periodic_gradient(&map, &qoi, &DVector::zeros(4), &tight()).unwrap();
        for p in 0..3 {
            let mut plus = mu.clone();
            plus[p] += 0.5;
            let mut minus = mu.clone();
            minus[p] -= 0.5;
            let fd = oracle_quantities(&map, &qoi, &plus) - oracle_quantities(&map, &qoi, &minus);
            for q in 0..3 {
                let adj = res.gradient.values[(q, p)];
                prop_assert!((adj - fd[q]).abs() <= 1e-9 * fd.amax().max(1.0));
            }
        }
    }
}
