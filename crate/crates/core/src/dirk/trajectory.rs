use std::io::Write;

use nalgebra::DVector;

use super::{ButcherTableau, TimeGrid};
use crate::error::Result;
use crate::io::{csv_err, csv_writer, fmt_f64};
use crate::model::StateVector;

/// States `u^(0..N_t)` and stage increments `k_i^(n)` over one period.
///
/// `stages[n - 1][i]` holds `k_{i+1}^(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tableau: ButcherTableau,
    pub grid: TimeGrid,
    pub states: Vec<StateVector>,
    pub stages: Vec<Vec<StateVector>>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn initial(&self) -> &StateVector {
        &self.states[0]
    }

    pub fn final_state(&self) -> &StateVector {
        &self.states[self.n_steps()]
    }

    /// `u^(N_t) - u^(0)`.
    pub fn defect(&self) -> StateVector {
        self.final_state() - self.initial()
    }

    /// Stage state `u_i^(n) = u^(n-1) + sum_{j<=i} a_ij k_j^(n)` (0-based `i`).
    pub fn stage_state(&self, n: usize, i: usize) -> StateVector {
        let mut u = self.states[n - 1].clone();
        for j in 0..=i {
            u.axpy(self.tableau.a(i, j), &self.stages[n - 1][j], 1.0);
        }
        u
    }

    pub fn stage_time(&self, n: usize, i: usize) -> f64 {
        self.grid.t(n - 1) + self.tableau.c(i) * self.grid.dt(n)
    }

    /// Largest relative violation of `u^(n) = u^(n-1) + sum_i b_i k_i^(n)`.
    pub fn update_identity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 1..=self.n_steps() {
            let mut u = self.states[n - 1].clone();
            for (i, k) in self.stages[n - 1].iter().enumerate() {
                u.axpy(self.tableau.b(i), k, 1.0);
            }
            let scale = self.states[n].norm().max(1.0);
            worst = worst.max((u - &self.states[n]).norm() / scale);
        }
        worst
    }

    /// One row per record: `(n, 0)` is the state `u^(n)` at `t_n`, `(n, i)`
    /// for `i >= 1` is the increment `k_i^(n)` at its stage time.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_records_csv(w, &self.states, &self.stages, &self.grid, &self.tableau)
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        write_records_binary(w, &self.states, &self.stages)
    }
}

pub(crate) fn write_records_csv<W: Write>(
    w: W,
    states: &[DVector<f64>],
    stages: &[Vec<DVector<f64>>],
    grid: &TimeGrid,
    tableau: &ButcherTableau,
) -> Result<()> {
    let mut out = csv_writer(w);
    let dim = states[0].len();
    let mut header = vec!["n".to_string(), "i".to_string(), "t".to_string()];
    header.extend((0..dim).map(|j| format!("v{j}")));
    out.write_record(&header).map_err(csv_err)?;
    let mut row = |n: usize, i: usize, t: f64, v: &DVector<f64>| -> Result<()> {
        let mut rec = vec![n.to_string(), i.to_string(), fmt_f64(t)];
        rec.extend(v.iter().map(|&x| fmt_f64(x)));
        out.write_record(&rec).map_err(csv_err)
    };
    row(0, 0, grid.t(0), &states[0])?;
    for n in 1..states.len() {
        row(n, 0, grid.t(n), &states[n])?;
        for (i, k) in stages[n - 1].iter().enumerate() {
            row(n, i + 1, grid.t(n - 1) + tableau.c(i) * grid.dt(n), k)?;
        }
    }
    drop(row);
    out.flush()?;
    Ok(())
}

/// Header `N_u, N_t, s` as little-endian `u64`, then doubles: `u^(0)`, and
/// for each step `u^(n), k_1^(n), ..., k_s^(n)`.
pub(crate) fn write_records_binary<W: Write>(
    mut w: W,
    states: &[DVector<f64>],
    stages: &[Vec<DVector<f64>>],
) -> Result<()> {
    let dim = states[0].len() as u64;
    let n_t = (states.len() - 1) as u64;
    let s = stages.first().map_or(0, |k| k.len()) as u64;
    for h in [dim, n_t, s] {
        w.write_all(&h.to_le_bytes())?;
    }
    let mut put = |v: &DVector<f64>| -> std::io::Result<()> {
        for x in v.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    put(&states[0])?;
    for n in 1..states.len() {
        put(&states[n])?;
        for k in &stages[n - 1] {
            put(k)?;
        }
    }
    w.flush()?;
    Ok(())
}
