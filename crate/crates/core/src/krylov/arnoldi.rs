use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LinearOperator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigOptions {
    /// Number of leading-modulus eigenvalues wanted.
    pub k: usize,
    /// Subspace size; defaults to `max(2k + 2, 20)` capped at the dimension.
    pub m: Option<usize>,
    /// Bound on the Ritz residual `||A x - theta x||` with `||x|| = 1`.
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl EigOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            m: None,
            tol: 1e-10,
            max_restarts: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RitzValue {
    pub value: Complex<f64>,
    pub residual: f64,
    pub converged: bool,
}

impl RitzValue {
    pub fn modulus(&self) -> f64 {
        self.value.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigReport {
    /// Sorted by decreasing modulus; conjugate pairs are adjacent, positive
    /// imaginary part first.
    pub values: Vec<RitzValue>,
    pub converged: bool,
    pub restarts: usize,
    pub matvecs: usize,
}

struct Ritz {
    theta: Complex<f64>,
    y: DVector<Complex<f64>>,
    residual: f64,
}

/// Leading eigenvalues of a matrix-free operator by thick-restarted Arnoldi.
///
/// Each restart keeps an orthonormal basis of the wanted Ritz vectors (real
/// and imaginary parts of complex pairs) and continues the Krylov
/// decomposition from the Arnoldi residual vector. Reported residuals are
/// recomputed with the operator, not taken from the projected problem.
///
/// If the Krylov space becomes invariant before `m` steps, the basis is
/// extended with a fresh random direction, so operators with few distinct
/// eigenvalues (the identity included) still yield `k` values.
pub fn arnoldi_eigs<A: LinearOperator + ?Sized>(op: &A, opts: &EigOptions) -> Result<EigReport> {
    let n = op.dim();
    if opts.k == 0 || opts.k > n {
        return Err(Error::InvalidInput(format!(
            "arnoldi: need 0 < k <= dim, got k = {} with dim {n}",
            opts.k
        )));
    }
    let m = opts.m.unwrap_or((2 * opts.k + 2).max(20)).min(n).max(opts.k);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut matvecs = 0;
    let mut basis = vec![random_unit(n, &mut rng)];
    let mut g = DMatrix::<f64>::zeros(m + 1, m);
    let mut kept = 0;

    for restart in 0..=opts.max_restarts {
        extend_basis(op, &mut basis, &mut g, kept, m, &mut rng, &mut matvecs)?;
        let beta = g[(m, m - 1)];
        let gm = g.rows(0, m).into_owned();
        let mut ritz = ritz_pairs(&gm, beta);
        ritz.sort_by(order_by_modulus);
        let wanted = wanted_count(&ritz, opts.k);
        let estimated = ritz[..wanted].iter().all(|r| r.residual <= opts.tol);

        if estimated || restart == opts.max_restarts {
            let mut values = Vec::with_capacity(wanted);
            for r in &ritz[..wanted] {
                let residual = true_residual(op, &basis[..m], r, &mut matvecs)?;
                values.push(RitzValue {
                    value: r.theta,
                    residual,
                    converged: residual <= opts.tol,
                });
            }
            let converged = values.iter().all(|v| v.converged);
            return Ok(EigReport {
                values,
                converged,
                restarts: restart,
                matvecs,
            });
        }

        let keep = restart_size(&ritz, opts.k, m);
        match thick_restart(&basis, &gm, beta, &ritz[..keep], m) {
            Some((new_basis, new_g, p)) => {
                basis = new_basis;
                g = new_g;
                kept = p;
            }
            None => {
                let mut next = DVector::<f64>::zeros(n);
                for r in &ritz[..wanted] {
                    for (j, v) in basis.iter().enumerate().take(m) {
                        next.axpy(r.y[j].re + r.y[j].im, v, 1.0);
                    }
                }
                let norm = next.norm();
                let start = if norm > 1e-12 { next / norm } else { random_unit(n, &mut rng) };
                basis = vec![start];
                g = DMatrix::zeros(m + 1, m);
                kept = 0;
            }
        }
    }
    unreachable!("restart loop returns on its final pass")
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let norm = v.norm();
    v / norm
}

fn orthogonalize(basis: &[DVector<f64>], w: &mut DVector<f64>, coeffs: &mut [f64]) {
    coeffs[..basis.len()].iter_mut().for_each(|c| *c = 0.0);
    for _pass in 0..2 {
        for (i, v) in basis.iter().enumerate() {
            let d = v.dot(w);
            coeffs[i] += d;
            w.axpy(-d, v, 1.0);
        }
    }
}

/// Runs Arnoldi steps `kept..m`, filling columns of the projected matrix
/// `g` (`(m + 1) x m`) and growing `basis` to `m + 1` vectors.
fn extend_basis<A: LinearOperator + ?Sized>(
    op: &A,
    basis: &mut Vec<DVector<f64>>,
    g: &mut DMatrix<f64>,
    kept: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
    matvecs: &mut usize,
) -> Result<()> {
    let n = op.dim();
    let mut coeffs = vec![0.0; m + 1];
    for j in kept..m {
        let mut w = op.apply(&basis[j])?;
        *matvecs += 1;
        let scale = w.norm();
        orthogonalize(&basis[..=j], &mut w, &mut coeffs);
        for i in 0..=j {
            g[(i, j)] = coeffs[i];
        }
        let hn = w.norm();
        if hn > 1e-12 * scale.max(f64::MIN_POSITIVE) && hn > 0.0 {
            g[(j + 1, j)] = hn;
            basis.push(w / hn);
        } else {
            g[(j + 1, j)] = 0.0;
            if basis.len() < n {
                let mut fresh = random_unit(n, rng);
                orthogonalize(basis, &mut fresh, &mut coeffs);
                let norm = fresh.norm();
                basis.push(fresh / norm);
            } else {
                basis.push(DVector::zeros(n));
            }
        }
    }
    Ok(())
}

/// Number of Ritz vectors kept at a restart: roughly halfway between `k`
/// and `m`, never splitting a conjugate pair.
fn restart_size(sorted: &[Ritz], k: usize, m: usize) -> usize {
    let mut keep = (k + (m - k) / 2).clamp(1, m - 1);
    if keep < sorted.len() && sorted[keep - 1].theta.im != 0.0 {
        let last = sorted[keep - 1].theta;
        if (sorted[keep].theta - last.conj()).norm() <= 1e-10 * last.norm().max(1.0) {
            keep = if keep + 1 < m { keep + 1 } else { keep - 1 };
        }
    }
    keep.max(1)
}

/// Compresses the decomposition onto the span of the selected Ritz vectors.
/// Returns `None` when that span is not numerically invariant under the
/// projected matrix.
fn thick_restart(
    basis: &[DVector<f64>],
    gm: &DMatrix<f64>,
    beta: f64,
    selected: &[Ritz],
    m: usize,
) -> Option<(Vec<DVector<f64>>, DMatrix<f64>, usize)> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut coeffs = vec![0.0; 2 * selected.len() + 1];
    for r in selected {
        let parts = if r.theta.im > 0.0 {
            vec![r.y.map(|z| z.re), r.y.map(|z| z.im)]
        } else if r.theta.im < 0.0 {
            continue;
        } else {
            vec![r.y.map(|z| z.re)]
        };
        for mut v in parts {
            let norm0 = v.norm();
            orthogonalize(&cols, &mut v, &mut coeffs);
            let norm = v.norm();
            if norm > 1e-8 * norm0.max(f64::MIN_POSITIVE) {
                cols.push(v / norm);
            }
        }
    }
    let p = cols.len();
    if p == 0 || p >= m {
        return None;
    }
    let q = DMatrix::from_columns(&cols);
    let t = q.transpose() * gm * &q;
    let invariance = (gm * &q - &q * &t).norm();
    if invariance > 1e-10 * gm.norm().max(f64::MIN_POSITIVE) {
        return None;
    }
    let n = basis[0].len();
    let mut new_basis = Vec::with_capacity(m + 1);
    for c in 0..p {
        let mut v = DVector::zeros(n);
        for j in 0..m {
            v.axpy(q[(j, c)], &basis[j], 1.0);
        }
        new_basis.push(v);
    }
    new_basis.push(basis[m].clone());
    let mut g = DMatrix::zeros(m + 1, m);
    g.view_mut((0, 0), (p, p)).copy_from(&t);
    for c in 0..p {
        g[(p, c)] = beta * q[(m - 1, c)];
    }
    Some((new_basis, g, p))
}

fn true_residual<A: LinearOperator + ?Sized>(
    op: &A,
    basis: &[DVector<f64>],
    r: &Ritz,
    matvecs: &mut usize,
) -> Result<f64> {
    let n = basis[0].len();
    let mut xr = DVector::<f64>::zeros(n);
    let mut xi = DVector::<f64>::zeros(n);
    for (j, v) in basis.iter().enumerate() {
        xr.axpy(r.y[j].re, v, 1.0);
        xi.axpy(r.y[j].im, v, 1.0);
    }
    let norm = (xr.norm_squared() + xi.norm_squared()).sqrt();
    if norm == 0.0 {
        return Ok(f64::INFINITY);
    }
    let (th_re, th_im) = (r.theta.re, r.theta.im);
    let ar = op.apply(&xr)?;
    *matvecs += 1;
    let (res_re, res_im) = if xi.amax() > 0.0 {
        let ai = op.apply(&xi)?;
        *matvecs += 1;
        (
            &ar - &xr * th_re + &xi * th_im,
            ai - &xi * th_re - &xr * th_im,
        )
    } else {
        (&ar - &xr * th_re, -&xr * th_im)
    };
    Ok((res_re.norm_squared() + res_im.norm_squared()).sqrt() / norm)
}

fn ritz_pairs(h: &DMatrix<f64>, beta: f64) -> Vec<Ritz> {
    let m = h.nrows();
    let hc: DMatrix<Complex<f64>> = h.map(|x| Complex::new(x, 0.0));
    let scale = h.norm().max(f64::MIN_POSITIVE);
    h.complex_eigenvalues()
        .iter()
        .map(|&theta| {
            // Inverse iteration with a slightly perturbed shift.
            let shift = theta + Complex::new(1e-10 * scale, 1e-10 * scale);
            let shifted = &hc - DMatrix::<Complex<f64>>::identity(m, m) * shift;
            let lu = shifted.lu();
            let mut y = DVector::from_fn(m, |i, _| Complex::new(1.0 + 0.1 * i as f64, 0.0));
            for _ in 0..3 {
                if let Some(z) = lu.solve(&y) {
                    let nz = z.norm();
                    if nz > 0.0 && nz.is_finite() {
                        y = z.unscale(nz);
                    }
                }
            }
            let ny = y.norm();
            y.unscale_mut(ny);
            Ritz {
                theta,
                residual: beta.abs() * y[m - 1].norm(),
                y,
            }
        })
        .collect()
}

fn order_by_modulus(a: &Ritz, b: &Ritz) -> Ordering {
    let (ma, mb) = (a.theta.norm(), b.theta.norm());
    let tol = 1e-12 * ma.max(mb).max(1e-300);
    if (ma - mb).abs() > tol {
        mb.total_cmp(&ma)
    } else {
        b.theta
            .im
            .total_cmp(&a.theta.im)
            .then(b.theta.re.total_cmp(&a.theta.re))
    }
}

/// `k`, extended by one when the k-th value's conjugate would be cut off.
fn wanted_count(sorted: &[Ritz], k: usize) -> usize {
    if k < sorted.len() {
        let last = sorted[k - 1].theta;
        let next = sorted[k].theta;
        if last.im != 0.0 && (next - last.conj()).norm() <= 1e-10 * last.norm().max(1.0) {
            return k + 1;
        }
    }
    k
}
