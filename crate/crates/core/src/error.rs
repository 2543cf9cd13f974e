use thiserror::Error;

/// Errors raised by the integrators, shooting solvers and optimizers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular mass matrix")]
    SingularMass,

    #[error("unknown tableau `{0}` (expected backward-euler, sdirk2 or dirk3)")]
    UnknownTableau(String),

    #[error("tableau violates {condition} (residual {residual:e})")]
    InvalidTableau { condition: &'static str, residual: f64 },

    #[error("stage {stage} failed to converge: residual {residual:e} after {iterations} iterations")]
    StageSolve {
        stage: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("singular linearized stage operator at step {step}, stage {stage}")]
    SingularStage { step: usize, stage: usize },

    #[error("{method} did not converge in {iterations} iterations (defect {defect:e})")]
    NotConverged {
        method: String,
        iterations: usize,
        defect: f64,
    },

    #[error("line search failed at iteration {iteration}")]
    LineSearch { iteration: usize },

    #[error("fixed-point iteration diverged (residual {residual:e})")]
    Diverged { residual: f64 },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("{stage} failed: {source}")]
    Labeled {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::StageSolve { .. } => Error::Step {
                step,
                source: Box::new(self),
            },
            Error::SingularStage { stage, .. } => Error::SingularStage { step, stage },
            other => other,
        }
    }

    pub(crate) fn labeled(self, stage: &'static str) -> Self {
        Error::Labeled {
            stage,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
