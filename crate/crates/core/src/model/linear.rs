use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, LU};

use super::{Model, ParamVector, Qoi, StateVector};
use crate::error::{Error, Result};

/// Temporal shape of one forcing term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    Constant,
    Cos(u32),
    Sin(u32),
}

impl Basis {
    pub fn eval(&self, t: f64, period: f64) -> f64 {
        let w = 2.0 * PI / period;
        match *self {
            Basis::Constant => 1.0,
            Basis::Cos(k) => (w * k as f64 * t).cos(),
            Basis::Sin(k) => (w * k as f64 * t).sin(),
        }
    }
}

/// One term `mu_p * direction * basis(t)` of the forcing; `p` is the term's
/// position in the forcing list.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingTerm {
    pub direction: DVector<f64>,
    pub basis: Basis,
}

impl ForcingTerm {
    pub fn new(direction: DVector<f64>, basis: Basis) -> Self {
        Self { direction, basis }
    }

    /// Forcing on a single component.
    pub fn on_component(dim: usize, component: usize, basis: Basis) -> Self {
        let mut direction = DVector::zeros(dim);
        direction[component] = 1.0;
        Self { direction, basis }
    }
}

#[derive(Debug, Clone)]
struct Mass {
    matrix: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// `M du/dt = A u + sum_p mu_p d_p phi_p(t)` with truncated Fourier forcing.
#[derive(Debug, Clone)]
pub struct LinearPeriodic {
    a: DMatrix<f64>,
    forcing: Vec<ForcingTerm>,
    mass: Option<Mass>,
    period: f64,
}

/// Builds the linear forced model. `mass = None` means `M = I`.
pub fn make_linear_periodic(
    a: DMatrix<f64>,
    forcing: Vec<ForcingTerm>,
    mass: Option<DMatrix<f64>>,
    period: f64,
) -> Result<LinearPeriodic> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "A must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidInput(format!("period must be positive, got {period}")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("A has non-finite entries".into()));
    }
    for (p, term) in forcing.iter().enumerate() {
        if term.direction.len() != n {
            return Err(Error::InvalidInput(format!(
                "forcing term {p} has length {}, expected {n}",
                term.direction.len()
            )));
        }
    }
    let mass = match mass {
        None => None,
        Some(m) => {
            if m.nrows() != n || m.ncols() != n || m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("mass matrix must be finite and match A".into()));
            }
            let lu = m.clone().lu();
            let u = lu.u();
            let diag = u.diagonal().map(f64::abs);
            let (lo, hi) = (diag.min(), diag.max());
            if !(lo > 1e-13 * hi) {
                return Err(Error::SingularMass);
            }
            let lu_t = m.transpose().lu();
            Some(Mass { matrix: m, lu, lu_t })
        }
    };
    Ok(LinearPeriodic {
        a,
        forcing,
        mass,
        period,
    })
}

impl LinearPeriodic {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn forcing(&self) -> &[ForcingTerm] {
        &self.forcing
    }

    /// Forcing `g(t; mu)`.
    pub fn forcing_at(&self, mu: &ParamVector, t: f64) -> StateVector {
        let mut g = DVector::zeros(self.a.nrows());
        for (p, term) in self.forcing.iter().enumerate() {
            g.axpy(mu[p] * term.basis.eval(t, self.period), &term.direction, 1.0);
        }
        g
    }
}

impl Model for LinearPeriodic {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn n_params(&self) -> usize {
        self.forcing.len()
    }

    fn period(&self) -> f64 {
        self.period
    }

    fn residual(&self, u: &StateVector, mu: &ParamVector, t: f64) -> StateVector {
        &self.a * u + self.forcing_at(mu, t)
    }

    fn jac_u_apply(&self, _u: &StateVector, _mu: &ParamVector, _t: f64, v: &StateVector) -> StateVector {
        &self.a * v
    }

    fn jac_u_apply_transpose(
        &self,
        _u: &StateVector,
        _mu: &ParamVector,
        _t: f64,
        w: &StateVector,
    ) -> StateVector {
        self.a.tr_mul(w)
    }

    fn jac_mu_apply_transpose(
        &self,
        _u: &StateVector,
        _mu: &ParamVector,
        t: f64,
        w: &StateVector,
    ) -> ParamVector {
        DVector::from_iterator(
            self.forcing.len(),
            self.forcing
                .iter()
                .map(|term| term.basis.eval(t, self.period) * term.direction.dot(w)),
        )
    }

    fn mass_apply(&self, v: &StateVector) -> StateVector {
        match &self.mass {
            None => v.clone(),
            Some(m) => &m.matrix * v,
        }
    }

    fn mass_solve(&self, b: &StateVector) -> StateVector {
        match &self.mass {
            None => b.clone(),
            Some(m) => m.lu.solve(b).expect("mass matrix checked at construction"),
        }
    }

    fn mass_apply_transpose(&self, v: &StateVector) -> StateVector {
        match &self.mass {
            None => v.clone(),
            Some(m) => m.matrix.tr_mul(v),
        }
    }

    fn mass_solve_transpose(&self, b: &StateVector) -> StateVector {
        match &self.mass {
            None => b.clone(),
            Some(m) => m.lu_t.solve(b).expect("mass matrix checked at construction"),
        }
    }

    fn jac_u_matrix(&self, _u: &StateVector, _mu: &ParamVector, _t: f64) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }

    fn mass_matrix(&self) -> DMatrix<f64> {
        match &self.mass {
            None => DMatrix::identity(self.dim(), self.dim()),
            Some(m) => m.matrix.clone(),
        }
    }
}

/// One quantity `f = c.u + 1/2 u.Q u + (e.mu)(g.u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTerm {
    pub linear: DVector<f64>,
    pub quadratic: Option<DMatrix<f64>>,
    pub coupling: Option<(DVector<f64>, DVector<f64>)>,
}

/// Quadratic integrands for the linear model. The optional coupling term
/// gives an explicit parameter dependence.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticQoi {
    pub terms: Vec<QuadraticTerm>,
}

impl QuadraticQoi {
    /// `f = c.u`
    pub fn linear(c: DVector<f64>) -> Self {
        Self {
            terms: vec![QuadraticTerm {
                linear: c,
                quadratic: None,
                coupling: None,
            }],
        }
    }

    pub fn with_term(
        mut self,
        linear: DVector<f64>,
        quadratic: Option<DMatrix<f64>>,
        coupling: Option<(DVector<f64>, DVector<f64>)>,
    ) -> Self {
        self.terms.push(QuadraticTerm {
            linear,
            quadratic,
            coupling,
        });
        self
    }

    pub fn empty() -> Self {
        Self { terms: Vec::new() }
    }
}

impl Qoi for QuadraticQoi {
    fn n_qoi(&self) -> usize {
        self.terms.len()
    }

    fn integrand(&self, u: &StateVector, mu: &ParamVector, _t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|term| {
                let mut f = term.linear.dot(u);
                if let Some(q) = &term.quadratic {
                    f += 0.5 * u.dot(&(q * u));
                }
                if let Some((e, g)) = &term.coupling {
                    f += e.dot(mu) * g.dot(u);
                }
                f
            }),
        )
    }

    fn integrand_grad_u_transpose(
        &self,
        u: &StateVector,
        mu: &ParamVector,
        _t: f64,
        w: &DVector<f64>,
    ) -> StateVector {
        let mut out = DVector::zeros(u.len());
        for (term, &wq) in self.terms.iter().zip(w.iter()) {
            if wq == 0.0 {
                continue;
            }
            out.axpy(wq, &term.linear, 1.0);
            if let Some(q) = &term.quadratic {
                // d/du (1/2 u.Q u) = 1/2 (Q + Q^T) u
                out.axpy(0.5 * wq, &(q * u + q.tr_mul(u)), 1.0);
            }
            if let Some((e, g)) = &term.coupling {
                out.axpy(wq * e.dot(mu), g, 1.0);
            }
        }
        out
    }

    fn integrand_grad_mu(&self, u: &StateVector, mu: &ParamVector, _t: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.terms.len(), mu.len());
        for (q, term) in self.terms.iter().enumerate() {
            if let Some((e, g)) = &term.coupling {
                let gu = g.dot(u);
                for p in 0..mu.len() {
                    out[(q, p)] = e[p] * gu;
                }
            }
        }
        out
    }
}
