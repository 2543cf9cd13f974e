mod common;

use common::*;
use nalgebra::{Complex, DMatrix, DVector};

use periodic_adjoint::dirk::{tableau_library, ButcherTableau, TimeGrid};
use periodic_adjoint::floquet::{analyze_stability, FloquetOptions};
use periodic_adjoint::gradient::affine_period_map;
use periodic_adjoint::model::{make_linear_periodic, LinearPeriodic};
use periodic_adjoint::shooting::{newton_krylov_solve, DirkMap, NewtonOptions, PeriodMap};

fn map_of(model: LinearPeriodic, n_t: usize, mu: DVector<f64>) -> DirkMap<LinearPeriodic> {
    DirkMap::new(model, tableau_library("dirk3").unwrap(), TimeGrid::uniform(n_t, 1.0).unwrap(), mu, 1e-13).unwrap()
}

/// Stability function `R(z) = 1 + z b^T (I - z A)^{-1} 1`.
fn stability_function(tab: &ButcherTableau, z: f64) -> f64 {
    let s = tab.stages();
    let m = DMatrix::identity(s, s) - tab.a_matrix() * z;
    let y = m.lu().solve(&DVector::from_element(s, 1.0)).unwrap();
    1.0 + z * tab.weights().dot(&y)
}

fn nearest(values: &[Complex<f64>], target: Complex<f64>) -> f64 {
    values.iter().map(|v| (v - target).norm()).fold(f64::INFINITY, f64::min)
}

#[test]
fn zero_dynamics_are_not_stable() {
    let map = map_of(zero_model(3), 5, DVector::zeros(0));
    let traj = map.evolve(&DVector::from_vec(vec![1.0, 0.0, -1.0])).unwrap();
    let rep = analyze_stability(&map, &traj, &FloquetOptions { k: 2, ..Default::default() }).unwrap();
    assert_eq!(rep.stable, Some(false));
    assert!((rep.spectral_radius - 1.0).abs() <= 1e-12);
}

#[test]
fn diagonal_decay_multipliers_converge_at_third_order() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
    let model = make_linear_periodic(a, vec![], None, 1.0).unwrap();
    let tab = tableau_library("dirk3").unwrap();
    let mut errs = Vec::new();
    let grids = [25usize, 50, 100];
    for &n_t in &grids {
        let map = map_of(model.clone(), n_t, DVector::zeros(0));
        let traj = map.evolve(&DVector::zeros(2)).unwrap();
        let rep = analyze_stability(&map, &traj, &FloquetOptions { k: 2, ..Default::default() }).unwrap();
        assert_eq!(rep.stable, Some(true));
        let got: Vec<Complex<f64>> = rep.eigenvalues.iter().map(|e| e.value).collect();
        // Discrete multipliers are R(-dt)^N and R(-2 dt)^N exactly.
        let dt = 1.0 / n_t as f64;
        for lam in [-1.0, -2.0] {
            let discrete = stability_function(&tab, lam * dt).powi(n_t as i32);
            assert!(nearest(&got, Complex::new(discrete, 0.0)) <= 1e-12);
        }
        let err = nearest(&got, Complex::new((-1f64).exp(), 0.0)).max(nearest(&got, Complex::new((-2f64).exp(), 0.0)));
        assert!(err <= 5.0 * (dt * 2.0).powi(3), "N_t = {n_t}: {err:e}");
        errs.push(err);
    }
    let h: Vec<f64> = grids.iter().map(|&n| 1.0 / n as f64).collect();
    let order = observed_order(&h, &errs);
    assert!(order >= 2.7, "order {order} from {errs:?}");
}

#[test]
fn linear_multipliers_match_dense_monodromy() {
    for (seed, mass) in [(300, false), (301, true)] {
        let (model, mu) = random_linear(seed, 12, (0.1, 2.0), mass);
        let map = map_of(model.clone(), 30, mu.clone());
        let (phi, _) = affine_period_map(&model, map.tableau(), map.grid(), &mu, 1e-14).unwrap();
        let mut dense: Vec<Complex<f64>> = phi.complex_eigenvalues().iter().copied().collect();
        dense.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        let traj = map.evolve(&DVector::zeros(12)).unwrap();
        let rep = analyze_stability(&map, &traj, &FloquetOptions { k: 4, ..Default::default() }).unwrap();
        assert_eq!(rep.stable, Some(true));
        assert!((rep.spectral_radius - dense[0].norm()).abs() <= 1e-10);
        let got: Vec<Complex<f64>> = rep.eigenvalues.iter().map(|e| e.value).collect();
        for ev in &dense[..4] {
            assert!(nearest(&got, *ev) <= 1e-9, "seed {seed}: {ev} missing from {got:?}");
        }
    }
}

/// Monodromy of a periodic orbit by central differences of the period map.
fn fd_monodromy<P: PeriodMap>(map: &P, u0: &DVector<f64>, eps: f64) -> DMatrix<f64> {
    let n = u0.len();
    let mut phi = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = eps;
        let plus = map.evolve(&(u0 + &e)).unwrap();
        let minus = map.evolve(&(u0 - &e)).unwrap();
        phi.set_column(j, &((plus.final_state() - minus.final_state()) / (2.0 * eps)));
    }
    phi
}

#[test]
fn vdp_orbit_multipliers_match_finite_difference_monodromy() {
    let (map, _) = vdp_map(100);
    let opts = NewtonOptions {
        tol: 1e-12,
        gmres_tol: 1e-10,
        precondition: 5,
        ..Default::default()
    };
    let sol = newton_krylov_solve(&map, &DVector::zeros(2), &opts).unwrap().ensure_converged().unwrap();
    let rep = analyze_stability(&map, &sol.trajectory, &FloquetOptions::default()).unwrap();
    assert_eq!(rep.eigenvalues.len(), 2);
    assert_eq!(rep.stable, Some(true));
    let phi = fd_monodromy(&map, &sol.u0, 1e-5);
    let dense: Vec<Complex<f64>> = phi.complex_eigenvalues().iter().copied().collect();
    for e in &rep.eigenvalues {
        assert!(nearest(&dense, e.value) <= 1e-7, "{} vs {dense:?}", e.value);
    }
    let det = phi.determinant();
    let prod = rep.eigenvalues[0].value * rep.eigenvalues[1].value;
    assert!((prod.re - det).abs() <= 1e-7 && prod.im.abs() <= 1e-7);
}

#[test]
fn burgers_leading_multipliers_match_finite_difference_monodromy() {
    let (map, _) = burgers_map(24, 30, true, false);
    let opts = NewtonOptions {
        tol: 1e-12,
        gmres_tol: 1e-10,
        precondition: 5,
        ..Default::default()
    };
    let sol = newton_krylov_solve(&map, &DVector::zeros(24), &opts).unwrap().ensure_converged().unwrap();
    let rep = analyze_stability(&map, &sol.trajectory, &FloquetOptions { k: 3, ..Default::default() }).unwrap();
    assert_eq!(rep.stable, Some(true));
    let phi = fd_monodromy(&map, &sol.u0, 1e-5);
    let mut dense: Vec<Complex<f64>> = phi.complex_eigenvalues().iter().copied().collect();
    dense.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    assert!((rep.spectral_radius - dense[0].norm()).abs() <= 1e-7);
    for e in &rep.eigenvalues {
        assert!(nearest(&dense, e.value) <= 1e-7, "{}", e.value);
    }
}

#[test]
fn stability_csv_layout() {
    let (model, mu) = random_linear(302, 6, (0.3, 2.0), false);
    let map = map_of(model, 10, mu);
    let traj = map.evolve(&DVector::zeros(6)).unwrap();
    let rep = analyze_stability(&map, &traj, &FloquetOptions { k: 3, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "re,im,modulus,residual");
    assert_eq!(lines.len(), 1 + rep.eigenvalues.len());
    let first: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[0], rep.eigenvalues[0].value.re);
    assert_eq!(first[2], rep.eigenvalues[0].modulus());
}
