use crate::error::{Error, Result};

/// Time knots `0 = t_0 < t_1 < ... < t_{N_t} = T` over one period.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(n_steps: usize, period: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidInput("time grid needs at least one step".into()));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidInput(format!("period must be positive, got {period}")));
        }
        let mut knots: Vec<f64> = (0..=n_steps).map(|n| period * n as f64 / n_steps as f64).collect();
        knots[n_steps] = period;
        Ok(Self { knots })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 {
            return Err(Error::InvalidInput("time knots must start at 0 and have at least two entries".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidInput("time knots must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    pub fn n_steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn period(&self) -> f64 {
        self.knots[self.n_steps()]
    }

    /// Knot `t_n`, `0 <= n <= N_t`.
    pub fn t(&self, n: usize) -> f64 {
        self.knots[n]
    }

    /// Step size `t_n - t_{n-1}`, `1 <= n <= N_t`.
    pub fn dt(&self, n: usize) -> f64 {
        self.knots[n] - self.knots[n - 1]
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_hits_period() {
        let g = TimeGrid::uniform(7, 0.3).unwrap();
        assert_eq!(g.n_steps(), 7);
        assert_eq!(g.period(), 0.3);
        let total: f64 = (1..=7).map(|n| g.dt(n)).sum();
        assert!((total - 0.3).abs() < 1e-16);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(TimeGrid::from_knots(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_knots(vec![0.1, 0.5]).is_err());
        assert!(TimeGrid::uniform(0, 1.0).is_err());
        assert!(TimeGrid::from_knots(vec![0.0, 0.2, 1.0]).is_ok());
    }
}
