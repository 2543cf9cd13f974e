use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const TABLEAU_TOL: f64 = 1e-14;

/// Coefficients of an `s`-stage diagonally implicit Runge-Kutta scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    name: String,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    order: usize,
}

impl ButcherTableau {
    /// Builds a tableau, checking lower-triangularity, `sum b = 1`,
    /// `c_i = sum_j a_ij` and the order conditions up to `order` (at most 3).
    pub fn new(
        name: impl Into<String>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        order: usize,
    ) -> Result<Self> {
        let s = b.len();
        if s == 0 || a.shape() != (s, s) || c.len() != s {
            return Err(Error::InvalidInput(format!(
                "tableau shapes: a {:?}, b {}, c {}",
                a.shape(),
                s,
                c.len()
            )));
        }
        if !(1..=3).contains(&order) {
            return Err(Error::InvalidInput(format!("unsupported tableau order {order}")));
        }
        let upper = (0..s)
            .flat_map(|i| (i + 1..s).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].abs())
            .fold(0.0, f64::max);
        check("lower-triangular a", upper)?;
        check("sum of weights", b.sum() - 1.0)?;
        let row_sums = DVector::from_fn(s, |i, _| a.row(i).sum());
        check("row sums equal abscissae", (row_sums - &c).amax())?;
        if order >= 2 {
            check("second-order condition", b.dot(&c) - 0.5)?;
        }
        if order >= 3 {
            let c2 = c.component_mul(&c);
            check("third-order condition sum b c^2", b.dot(&c2) - 1.0 / 3.0)?;
            check("third-order condition sum b a c", b.dot(&(&a * &c)) - 1.0 / 6.0)?;
        }
        Ok(Self {
            name: name.into(),
            a,
            b,
            c,
            order,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[(i, j)]
    }

    pub fn b(&self, i: usize) -> f64 {
        self.b[i]
    }

    pub fn c(&self, i: usize) -> f64 {
        self.c[i]
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn abscissae(&self) -> &DVector<f64> {
        &self.c
    }
}

fn check(condition: &'static str, residual: f64) -> Result<()> {
    if residual.abs() <= TABLEAU_TOL {
        Ok(())
    } else {
        Err(Error::InvalidTableau { condition, residual })
    }
}

/// Built-in schemes: `backward-euler`, `sdirk2` (two stages, diagonal
/// `1 - 1/sqrt 2`) and `dirk3` (three stages, L-stable, third order).
pub fn tableau_library(name: &str) -> Result<ButcherTableau> {
    match name {
        "backward-euler" => ButcherTableau::new(
            name,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
            1,
        ),
        "sdirk2" => {
            let g = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
            ButcherTableau::new(
                name,
                DMatrix::from_row_slice(2, 2, &[g, 0.0, 1.0 - g, g]),
                DVector::from_vec(vec![1.0 - g, g]),
                DVector::from_vec(vec![g, 1.0]),
                2,
            )
        }
        "dirk3" => {
            let al = dirk3_diagonal();
            let tau = (1.0 + al) / 2.0;
            let b1 = -(6.0 * al * al - 16.0 * al + 1.0) / 4.0;
            let b2 = (6.0 * al * al - 20.0 * al + 5.0) / 4.0;
            ButcherTableau::new(
                name,
                DMatrix::from_row_slice(3, 3, &[al, 0.0, 0.0, tau - al, al, 0.0, b1, b2, al]),
                DVector::from_vec(vec![b1, b2, al]),
                DVector::from_vec(vec![al, tau, 1.0]),
                3,
            )
        }
        other => Err(Error::UnknownTableau(other.to_string())),
    }
}

/// Root of `x^3 - 3x^2 + 3x/2 - 1/6` in `(1/6, 1/2)`, polished by Newton.
fn dirk3_diagonal() -> f64 {
    let mut x = 0.435_866_521_508_459;
    for _ in 0..3 {
        let p = ((x - 3.0) * x + 1.5) * x - 1.0 / 6.0;
        let dp = (3.0 * x - 6.0) * x + 1.5;
        x -= p / dp;
    }
    x
}
