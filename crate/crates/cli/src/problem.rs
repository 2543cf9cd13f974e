//! Turns a [`RunConfig`] into a period map and its quantities of interest.

use nalgebra::{DMatrix, DVector};
use periodic_adjoint::dirk::{tableau_library, TimeGrid};
use periodic_adjoint::model::{
    make_burgers_1d, make_forced_vdp, make_linear_periodic, Basis, Burgers1d, BurgersQoi, ForcedVanDerPol, ForcingTerm,
    LinearPeriodic, QuadraticQoi, VdpQoi,
};
use periodic_adjoint::shooting::DirkMap;

use crate::config::{BasisName, ModelConfig, RunConfig};
use crate::error::CliError;

pub const VDP_DEFAULT_MU: [f64; 3] = [-0.5, 0.8, 0.3];
pub const BURGERS_DEFAULT_MU: [f64; 3] = [1.0, 0.15, 0.3];

pub enum Problem {
    Vdp(DirkMap<ForcedVanDerPol>, VdpQoi),
    Linear(DirkMap<LinearPeriodic>, QuadraticQoi),
    Burgers(DirkMap<Burgers1d>, BurgersQoi),
}

/// Runs `$body` with `$map` and `$qoi` bound to the concrete model types.
macro_rules! with_problem {
    ($problem:expr, |$map:ident, $qoi:ident| $body:expr) => {
        match $problem {
            $crate::problem::Problem::Vdp($map, $qoi) => $body,
            $crate::problem::Problem::Linear($map, $qoi) => $body,
            $crate::problem::Problem::Burgers($map, $qoi) => $body,
        }
    };
}
pub(crate) use with_problem;

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

/// Builds the problem; the config is assumed validated.
pub fn build(cfg: &RunConfig) -> Result<Problem, CliError> {
    let d = &cfg.discretization;
    let tableau = tableau_library(&d.tableau)?;
    let grid = TimeGrid::uniform(d.n_t, d.period)?;
    Ok(match &cfg.model {
        ModelConfig::Vdp { mu } => {
            let (model, qoi) = make_forced_vdp(d.period);
            let mu = DVector::from_vec(mu.clone().unwrap_or(VDP_DEFAULT_MU.to_vec()));
            Problem::Vdp(DirkMap::new(model, tableau, grid, mu, d.stage_tol)?, qoi)
        }
        ModelConfig::Linear { a, forcing, mass, mu } => {
            let terms = forcing
                .iter()
                .map(|f| {
                    let basis = match f.basis {
                        BasisName::Constant => Basis::Constant,
                        BasisName::Cos => Basis::Cos(f.harmonic),
                        BasisName::Sin => Basis::Sin(f.harmonic),
                    };
                    ForcingTerm::new(DVector::from_vec(f.direction.clone()), basis)
                })
                .collect();
            let model = make_linear_periodic(matrix(a), terms, mass.as_deref().map(matrix), d.period)?;
            let n = a.len();
            let weights: Vec<Vec<f64>> = cfg.qoi.weights.clone().unwrap_or_else(|| {
                (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
            });
            let qoi = weights
                .into_iter()
                .fold(QuadraticQoi::empty(), |q, w| q.with_term(DVector::from_vec(w), None, None));
            Problem::Linear(DirkMap::new(model, tableau, grid, DVector::from_vec(mu.clone()), d.stage_tol)?, qoi)
        }
        ModelConfig::Burgers {
            n_cells,
            nu,
            damping,
            dense_jacobian,
            consistent_mass,
            mu,
        } => {
            let (mut model, qoi) = make_burgers_1d(*n_cells, *nu, d.period)?;
            model = model.with_damping(*damping);
            if *dense_jacobian {
                model = model.with_dense_jacobian();
            }
            if *consistent_mass {
                model = model.with_consistent_mass();
            }
            let mu = DVector::from_vec(mu.clone().unwrap_or(BURGERS_DEFAULT_MU.to_vec()));
            Problem::Burgers(DirkMap::new(model, tableau, grid, mu, d.stage_tol)?, qoi)
        }
    })
}
