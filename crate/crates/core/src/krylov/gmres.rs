use nalgebra::{DMatrix, DVector};

use super::{KrylovReport, LinearOperator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    /// Relative tolerance on `||b - A x|| / ||b||`.
    pub tol: f64,
    pub max_iter: usize,
    /// Restart length; `None` runs a single cycle of up to `max_iter` steps.
    pub restart: Option<usize>,
}

impl GmresOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            restart: None,
        }
    }
}

/// Solves `A x = b` by GMRES with modified Gram-Schmidt plus one
/// reorthogonalization pass and Givens rotations.
///
/// When `max_iter` is exhausted the minimum-residual iterate is returned with
/// `converged = false`; callers decide whether that is fatal.
pub fn gmres<A: LinearOperator + ?Sized>(
    op: &A,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    opts: &GmresOptions,
) -> Result<(DVector<f64>, KrylovReport)> {
    let n = op.dim();
    if b.len() != n || x0.len() != n {
        return Err(Error::InvalidInput(format!(
            "gmres: operator dim {n}, rhs {}, guess {}",
            b.len(),
            x0.len()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("gmres tolerance must be positive".into()));
    }

    let mut report = KrylovReport::default();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        report.converged = true;
        report.residual_history.push(0.0);
        return Ok((DVector::zeros(n), report));
    }
    let target = opts.tol * b_norm;

    let mut x = x0.clone();
    let mut r = if x0.iter().all(|&v| v == 0.0) {
        b.clone()
    } else {
        report.matvecs += 1;
        b - op.apply(&x)?
    };
    let mut beta = r.norm();
    report.residual_history.push(beta);
    if beta <= target {
        report.converged = true;
        return Ok((x, report));
    }

    let cycle_len = opts.restart.unwrap_or(opts.max_iter).max(1).min(n.max(1));
    loop {
        let m = cycle_len.min(opts.max_iter - report.iterations);
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m + 1);
        basis.push(&r / beta);
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = DVector::<f64>::zeros(m + 1);
        g[0] = beta;
        let mut cols = 0;
        let mut done = false;

        for j in 0..m {
            let mut w = op.apply(&basis[j])?;
            report.matvecs += 1;
            report.iterations += 1;
            let w_norm0 = w.norm();
            for _pass in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let d = v.dot(&w);
                    h[(i, j)] += d;
                    w.axpy(-d, v, 1.0);
                }
            }
            let h_next = w.norm();
            h[(j + 1, j)] = h_next;

            for i in 0..j {
                let (a, bb) = (h[(i, j)], h[(i + 1, j)]);
                h[(i, j)] = cs[i] * a + sn[i] * bb;
                h[(i + 1, j)] = -sn[i] * a + cs[i] * bb;
            }
            let (a, bb) = (h[(j, j)], h[(j + 1, j)]);
            let rho = a.hypot(bb);
            if rho == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = a / rho;
                sn[j] = bb / rho;
            }
            h[(j, j)] = rho;
            h[(j + 1, j)] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            cols = j + 1;

            let res = g[j + 1].abs();
            report.residual_history.push(res);

            let breakdown = h_next <= 1e-14 * w_norm0.max(f64::MIN_POSITIVE);
            if breakdown {
                // Invariant Krylov subspace: the least-squares solution is exact
                // unless the projected operator is itself singular.
                if rho == 0.0 {
                    cols = j;
                    done = true;
                    break;
                }
                report.converged = true;
                done = true;
                break;
            }
            if res <= target {
                report.converged = true;
                done = true;
                break;
            }
            if report.iterations >= opts.max_iter {
                done = true;
                break;
            }
            basis.push(w / h_next);
        }

        if cols > 0 {
            let mut y = DVector::<f64>::zeros(cols);
            for i in (0..cols).rev() {
                let mut s = g[i];
                for l in i + 1..cols {
                    s -= h[(i, l)] * y[l];
                }
                y[i] = s / h[(i, i)];
            }
            for (i, v) in basis.iter().take(cols).enumerate() {
                x.axpy(y[i], v, 1.0);
            }
        }

        if done || report.iterations >= opts.max_iter {
            break;
        }
        r = b - op.apply(&x)?;
        report.matvecs += 1;
        beta = r.norm();
        if beta <= target {
            report.residual_history.push(beta);
            report.converged = true;
            break;
        }
    }
    Ok((x, report))
}
