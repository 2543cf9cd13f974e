//! Stability of periodic orbits from the leading eigenvalues of the
//! discrete monodromy operator `du^(N_t)/du^(0)`.

use std::cell::Cell;
use std::io::Write;

use nalgebra::DVector;

use crate::dirk::Trajectory;
use crate::error::Result;
use crate::io::{csv_err, csv_writer, fmt_f64};
use crate::krylov::{arnoldi_eigs, EigOptions, FnOperator, RitzValue};
use crate::shooting::{Linearized, PeriodMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetOptions {
    /// Number of multipliers; capped at the state dimension.
    pub k: usize,
    pub tol: f64,
    /// Stable means every modulus is at most `1 - margin`.
    pub margin: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self {
            k: 20,
            tol: 1e-10,
            margin: 1e-8,
            max_restarts: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Sorted by decreasing modulus.
    pub eigenvalues: Vec<RitzValue>,
    pub spectral_radius: f64,
    /// `None` when some wanted multiplier did not converge.
    pub stable: Option<bool>,
    pub margin: f64,
    pub matvecs: usize,
}

impl StabilityReport {
    /// Rows of `re,im,modulus,residual`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["re", "im", "modulus", "residual"]).map_err(csv_err)?;
        for e in &self.eigenvalues {
            out.write_record([
                fmt_f64(e.value.re),
                fmt_f64(e.value.im),
                fmt_f64(e.modulus()),
                fmt_f64(e.residual),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Leading Floquet multipliers of `trajectory` (normally a converged
/// periodic orbit) by Arnoldi on forward-sensitivity matvecs.
pub fn analyze_stability<P: PeriodMap + ?Sized>(
    map: &P,
    trajectory: &Trajectory,
    opts: &FloquetOptions,
) -> Result<StabilityReport> {
    let lin = map.linearize(trajectory)?;
    let sweeps = Cell::new(0usize);
    let op = FnOperator::new(map.dim(), |v: &DVector<f64>| {
        sweeps.set(sweeps.get() + 1);
        lin.forward(v)
    });
    let eig = arnoldi_eigs(
        &op,
        &EigOptions {
            k: opts.k.min(map.dim()),
            m: None,
            tol: opts.tol,
            max_restarts: opts.max_restarts,
            seed: opts.seed,
        },
    )?;
    let spectral_radius = eig.values.iter().map(|v| v.modulus()).fold(0.0, f64::max);
    let stable = eig.converged.then_some(spectral_radius <= 1.0 - opts.margin);
    Ok(StabilityReport {
        eigenvalues: eig.values,
        spectral_radius,
        stable,
        margin: opts.margin,
        matvecs: sweeps.get(),
    })
}
