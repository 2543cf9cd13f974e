#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use periodic_adjoint::dirk::{tableau_library, TimeGrid};
use periodic_adjoint::model::{
    make_burgers_1d, make_forced_vdp, make_linear_periodic, Basis, Burgers1d, BurgersQoi, ForcedVanDerPol,
    ForcingTerm, LinearPeriodic, VdpQoi,
};
use periodic_adjoint::shooting::DirkMap;

pub const VDP_PERIOD: f64 = 5.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// `u' = -u + mu`: steady periodic solution `u = mu`.
pub fn steady_model(period: f64) -> LinearPeriodic {
    make_linear_periodic(
        DMatrix::from_element(1, 1, -1.0),
        vec![ForcingTerm::on_component(1, 0, Basis::Constant)],
        None,
        period,
    )
    .unwrap()
}

/// `u' = -u`.
pub fn scalar_decay(period: f64) -> LinearPeriodic {
    make_linear_periodic(DMatrix::from_element(1, 1, -1.0), vec![], None, period).unwrap()
}

pub fn zero_model(n: usize) -> LinearPeriodic {
    make_linear_periodic(DMatrix::zeros(n, n), vec![], None, 1.0).unwrap()
}

/// Random stable linear model `A = P B P^-1` with `B` block diagonal
/// (real decay rates and damped rotations), so the eigenvalues of `A` are
/// known: real parts in `[-decay_max, -decay_min]`. Three forcing terms
/// (constant, cos, sin) with random directions; `mu` has length 3.
pub fn random_linear(seed: u64, n: usize, decay: (f64, f64), mass: bool) -> (LinearPeriodic, DVector<f64>) {
    let mut r = rng(seed);
    let mut b = DMatrix::zeros(n, n);
    let mut i = 0;
    while i < n {
        let d = -r.random_range(decay.0..decay.1);
        if i + 1 < n && r.random_bool(0.5) {
            let w = r.random_range(0.5..3.0);
            b[(i, i)] = d;
            b[(i + 1, i + 1)] = d;
            b[(i, i + 1)] = w;
            b[(i + 1, i)] = -w;
            i += 2;
        } else {
            b[(i, i)] = d;
            i += 1;
        }
    }
    let p = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| r.random_range(-0.3..0.3)) / (n as f64).sqrt();
    let a = &p * b * p.clone().try_inverse().unwrap();
    let forcing = vec![
        ForcingTerm::new(random_vector(&mut r, n), Basis::Constant),
        ForcingTerm::new(random_vector(&mut r, n), Basis::Cos(1)),
        ForcingTerm::new(random_vector(&mut r, n), Basis::Sin(2)),
    ];
    let m = mass.then(|| {
        let q = DMatrix::from_fn(n, n, |_, _| r.random_range(-0.2..0.2)) / (n as f64).sqrt();
        DMatrix::identity(n, n) + &q * q.transpose()
    });
    let mu = random_vector(&mut r, 3);
    (make_linear_periodic(a, forcing, m, 1.0).unwrap(), mu)
}

pub fn vdp_mu() -> DVector<f64> {
    DVector::from_vec(vec![-0.5, 0.8, 0.3])
}

pub fn vdp_map(n_t: usize) -> (DirkMap<ForcedVanDerPol>, VdpQoi) {
    let (model, qoi) = make_forced_vdp(VDP_PERIOD);
    let map = DirkMap::new(
        model,
        tableau_library("dirk3").unwrap(),
        TimeGrid::uniform(n_t, VDP_PERIOD).unwrap(),
        vdp_mu(),
        1e-12,
    )
    .unwrap();
    (map, qoi)
}

pub fn burgers_mu() -> DVector<f64> {
    DVector::from_vec(vec![1.0, 0.15, 0.3])
}

/// Damped viscous Burgers with a moving source, `T = 1`.
pub fn burgers_map(n_cells: usize, n_t: usize, dense: bool, consistent_mass: bool) -> (DirkMap<Burgers1d>, BurgersQoi) {
    let (mut model, qoi) = make_burgers_1d(n_cells, 0.02, 1.0).unwrap();
    model = model.with_damping(1.0);
    if dense {
        model = model.with_dense_jacobian();
    }
    if consistent_mass {
        model = model.with_consistent_mass();
    }
    let map = DirkMap::new(
        model,
        tableau_library("dirk3").unwrap(),
        TimeGrid::uniform(n_t, 1.0).unwrap(),
        burgers_mu(),
        1e-12,
    )
    .unwrap();
    (map, qoi)
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn observed_order(h: &[f64], err: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|x| x.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
