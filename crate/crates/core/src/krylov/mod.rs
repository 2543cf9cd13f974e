//! Matrix-free Krylov methods: GMRES for linear systems and Arnoldi for the
//! leading part of a spectrum. Both only need an operator action.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::io::{csv_err, csv_writer, fmt_f64};

mod arnoldi;
mod gmres;

pub use arnoldi::{arnoldi_eigs, EigOptions, EigReport, RitzValue};
pub use gmres::{gmres, GmresOptions};

/// A square linear map given by its action.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>>;
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self * v)
    }
}

/// Adapts a closure into a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LinearOperator for FnOperator<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        (self.f)(v)
    }
}

/// Convergence record of a Krylov solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KrylovReport {
    pub converged: bool,
    pub iterations: usize,
    /// Residual 2-norms, starting with the initial residual.
    pub residual_history: Vec<f64>,
    pub matvecs: usize,
}

impl KrylovReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }

    /// Rows of `iteration,residual`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["iteration", "residual"]).map_err(csv_err)?;
        for (i, r) in self.residual_history.iter().enumerate() {
            out.write_record([i.to_string(), fmt_f64(*r)]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}
