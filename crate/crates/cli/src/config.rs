//! TOML run configuration.
//!
//! ```toml
//! seed = 0
//!
//! [model]
//! name = "vdp"            # vdp | linear | burgers
//! mu = [-0.5, 0.8, 0.3]
//!
//! [discretization]
//! tableau = "dirk3"       # backward-euler | sdirk2 | dirk3
//! n_t = 100
//! period = 5.0
//!
//! [solver]
//! method = "newton"       # newton | fixed-point | steepest-descent | lbfgs
//! tol = 1e-10
//! ```
//!
//! Every section except `model` and `discretization` is optional. Unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `--out` and `PA_OUT` take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub qoi: QoiConfig,
    #[serde(default)]
    pub grad_check: GradCheckConfig,
    #[serde(default)]
    pub floquet: FloquetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Forced Van der Pol; `mu = [damping, amplitude, phase]`.
    Vdp {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<Vec<f64>>,
    },
    /// `M u' = A u + sum_p mu_p direction_p basis_p(t)`.
    Linear {
        a: Vec<Vec<f64>>,
        #[serde(default)]
        forcing: Vec<ForcingConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<Vec<Vec<f64>>>,
        mu: Vec<f64>,
    },
    /// Viscous Burgers on a periodic grid; `mu = [amplitude, excursion, width]`.
    Burgers {
        n_cells: usize,
        nu: f64,
        #[serde(default)]
        damping: f64,
        #[serde(default)]
        dense_jacobian: bool,
        #[serde(default)]
        consistent_mass: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    pub direction: Vec<f64>,
    pub basis: BasisName,
    #[serde(default = "one")]
    pub harmonic: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisName {
    Constant,
    Cos,
    Sin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    #[serde(default = "default_tableau")]
    pub tableau: String,
    pub n_t: usize,
    pub period: f64,
    #[serde(default = "default_stage_tol")]
    pub stage_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Newton,
    FixedPoint,
    SteepestDescent,
    Lbfgs,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Newton => "newton",
            Method::FixedPoint => "fixed-point",
            Method::SteepestDescent => "steepest-descent",
            Method::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualMethodName {
    Gmres,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_gmres_tol")]
    pub gmres_tol: f64,
    #[serde(default)]
    pub precondition: usize,
    /// Defaults to 20 for Newton and 1000 for the other methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default = "default_memory")]
    pub lbfgs_memory: usize,
    #[serde(default = "default_dual_method")]
    pub dual_method: DualMethodName,
    #[serde(default = "default_tol")]
    pub dual_tol: f64,
    /// Shooting guess; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            tol: default_tol(),
            gmres_tol: default_gmres_tol(),
            precondition: 0,
            max_iter: None,
            lbfgs_memory: default_memory(),
            dual_method: default_dual_method(),
            dual_tol: default_tol(),
            initial_guess: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoiConfig {
    /// Linear model only: one `int c.u dt` quantity per row. Defaults to one
    /// quantity per state component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { taus: default_taus() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloquetConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

impl Default for FloquetConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            tol: default_tol(),
            margin: default_margin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub qoi: usize,
    /// Value at the initial parameters when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default)]
    pub objective: usize,
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(default = "default_tol_opt")]
    pub tol_opt: f64,
    #[serde(default = "default_tol_con")]
    pub tol_con: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_sweep_tols")]
    pub tols: Vec<f64>,
    /// Newton inner tolerances.
    #[serde(default = "default_sweep_gmres_tols")]
    pub gmres_tols: Vec<f64>,
    /// Newton preconditioning sweeps.
    #[serde(default = "default_sweep_preconditions")]
    pub preconditions: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            tols: default_sweep_tols(),
            gmres_tols: default_sweep_gmres_tols(),
            preconditions: default_sweep_preconditions(),
        }
    }
}

fn one() -> u32 {
    1
}
fn default_tableau() -> String {
    "dirk3".into()
}
fn default_stage_tol() -> f64 {
    1e-12
}
fn default_method() -> Method {
    Method::Newton
}
fn default_tol() -> f64 {
    1e-10
}
fn default_gmres_tol() -> f64 {
    1e-3
}
fn default_memory() -> usize {
    10
}
fn default_dual_method() -> DualMethodName {
    DualMethodName::Gmres
}
fn default_taus() -> Vec<f64> {
    vec![1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
}
fn default_k() -> usize {
    20
}
fn default_margin() -> f64 {
    1e-8
}
fn default_tol_opt() -> f64 {
    1e-6
}
fn default_tol_con() -> f64 {
    1e-5
}
fn default_max_outer() -> usize {
    50
}
fn default_max_inner() -> usize {
    100
}
fn default_max_step() -> f64 {
    1.0
}
fn default_methods() -> Vec<Method> {
    vec![Method::Newton, Method::Lbfgs, Method::SteepestDescent, Method::FixedPoint]
}
fn default_sweep_tols() -> Vec<f64> {
    vec![1e-8]
}
fn default_sweep_gmres_tols() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4]
}
fn default_sweep_preconditions() -> Vec<usize> {
    vec![0, 5]
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// Checks everything that can be checked without running a solver.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("{field}: {why}")));
        let d = &self.discretization;
        if d.n_t == 0 {
            return bad("discretization.n_t", "must be at least 1");
        }
        if !(d.period > 0.0 && d.period.is_finite()) {
            return bad("discretization.period", "must be positive");
        }
        if !matches!(d.tableau.as_str(), "backward-euler" | "sdirk2" | "dirk3") {
            return bad("discretization.tableau", "expected backward-euler, sdirk2 or dirk3");
        }
        for (field, v) in [
            ("discretization.stage_tol", d.stage_tol),
            ("solver.tol", self.solver.tol),
            ("solver.dual_tol", self.solver.dual_tol),
            ("floquet.tol", self.floquet.tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, "must be positive");
            }
        }
        if !(self.solver.gmres_tol > 0.0 && self.solver.gmres_tol < 1.0) {
            return bad("solver.gmres_tol", "must lie in (0, 1)");
        }
        if self.solver.lbfgs_memory == 0 {
            return bad("solver.lbfgs_memory", "must be at least 1");
        }
        if !(self.floquet.margin >= 0.0) {
            return bad("floquet.margin", "must be non-negative");
        }
        if self.floquet.k == 0 {
            return bad("floquet.k", "must be at least 1");
        }
        if self.grad_check.taus.is_empty() || self.grad_check.taus.iter().any(|&t| !(t > 0.0)) {
            return bad("grad_check.taus", "must be a non-empty list of positive steps");
        }
        let s = &self.sweep;
        if s.methods.is_empty() || s.tols.is_empty() || s.gmres_tols.is_empty() || s.preconditions.is_empty() {
            return bad("sweep", "every sweep list must be non-empty");
        }
        if s.tols.iter().any(|&t| !(t > 0.0)) {
            return bad("sweep.tols", "must be positive");
        }
        if s.gmres_tols.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return bad("sweep.gmres_tols", "must lie in (0, 1)");
        }

        let (dim, n_mu) = self.model_shape()?;
        if let Some(g) = &self.solver.initial_guess {
            if g.len() != dim {
                return bad("solver.initial_guess", &format!("expected {dim} entries, got {}", g.len()));
            }
        }
        match (&self.model, &self.qoi.weights) {
            (ModelConfig::Linear { .. }, Some(w)) => {
                if w.is_empty() || w.iter().any(|row| row.len() != dim) {
                    return bad("qoi.weights", &format!("expected rows of length {dim}"));
                }
            }
            (_, Some(_)) => return bad("qoi.weights", "only the linear model takes quantity weights"),
            _ => {}
        }
        if let Some(o) = &self.optimize {
            let nq = self.n_qoi(dim);
            if o.objective >= nq {
                return bad("optimize.objective", &format!("must be below {nq}"));
            }
            for c in &o.constraints {
                if c.qoi >= nq || c.qoi == o.objective {
                    return bad("optimize.constraints", &format!("quantity {} is out of range or the objective", c.qoi));
                }
            }
            for (field, b) in [("optimize.lower", &o.lower), ("optimize.upper", &o.upper)] {
                if let Some(b) = b {
                    if b.len() != n_mu {
                        return bad(field, &format!("expected {n_mu} entries, got {}", b.len()));
                    }
                }
            }
            if o.lower.is_some() != o.upper.is_some() {
                return bad("optimize", "lower and upper must be given together");
            }
            for (field, v) in [("optimize.tol_opt", o.tol_opt), ("optimize.tol_con", o.tol_con), ("optimize.max_step", o.max_step)] {
                if !(v > 0.0) {
                    return bad(field, "must be positive");
                }
            }
        }
        Ok(())
    }

    /// State dimension and parameter count.
    fn model_shape(&self) -> Result<(usize, usize), CliError> {
        let bad = |field: &str, why: String| Err(CliError::Config(format!("{field}: {why}")));
        match &self.model {
            ModelConfig::Vdp { mu } => {
                if let Some(mu) = mu {
                    if mu.len() != 3 {
                        return bad("model.mu", format!("vdp takes 3 parameters, got {}", mu.len()));
                    }
                }
                Ok((2, 3))
            }
            ModelConfig::Linear { a, forcing, mass, mu } => {
                let n = a.len();
                if n == 0 || a.iter().any(|row| row.len() != n) {
                    return bad("model.a", "must be a non-empty square matrix".into());
                }
                if let Some(m) = mass {
                    if m.len() != n || m.iter().any(|row| row.len() != n) {
                        return bad("model.mass", format!("must be {n} x {n}"));
                    }
                }
                if forcing.iter().any(|f| f.direction.len() != n) {
                    return bad("model.forcing", format!("directions must have {n} entries"));
                }
                if mu.len() != forcing.len() {
                    return bad("model.mu", format!("one parameter per forcing term ({}), got {}", forcing.len(), mu.len()));
                }
                Ok((n, mu.len()))
            }
            ModelConfig::Burgers { n_cells, nu, damping, mu, .. } => {
                if *n_cells < 16 {
                    return bad("model.n_cells", "must be at least 16".into());
                }
                if !(*nu > 0.0) {
                    return bad("model.nu", "must be positive".into());
                }
                if !(*damping >= 0.0) {
                    return bad("model.damping", "must be non-negative".into());
                }
                if let Some(mu) = mu {
                    if mu.len() != 3 {
                        return bad("model.mu", format!("burgers takes 3 parameters, got {}", mu.len()));
                    }
                }
                Ok((*n_cells, 3))
            }
        }
    }

    fn n_qoi(&self, dim: usize) -> usize {
        match &self.model {
            ModelConfig::Linear { .. } => self.qoi.weights.as_ref().map_or(dim, |w| w.len()),
            _ => 2,
        }
    }
}
