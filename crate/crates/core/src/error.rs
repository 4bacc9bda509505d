use std::fmt;

/// Which half of the MAML-stabilizing condition failed for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MamlCondition {
    /// `rho(A - B K) >= 1`
    Initial,
    /// `rho(A - B (K - eta * grad J(K))) >= 1`
    Adapted,
}

impl fmt::Display for MamlCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MamlCondition::Initial => write!(f, "the gain itself is not stabilizing"),
            MamlCondition::Adapted => write!(f, "the one-step adapted gain is not stabilizing"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, got {got:?}")]
    Dimension {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("closed loop is unstable (spectral radius {radius})")]
    Unstable { radius: f64 },
    #[error("task {task} is not MAML-stabilizing: {condition} (spectral radius {radius})")]
    NotMamlStabilizing {
        task: usize,
        condition: MamlCondition,
        radius: f64,
    },
    #[error("{solver} did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },
    #[error("perturbation {index}: {source}")]
    Perturbation {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("task {task}, perturbation {perturbation}: {source}")]
    MetaSample {
        task: usize,
        perturbation: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("policy left the MAML-stabilizing set at iteration {iteration}: {source}")]
    StabilityViolation {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("internal numerical error: {0}")]
    Internal(&'static str),
}

impl Error {
    /// Strips provenance wrappers and returns the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Perturbation { source, .. }
            | Error::MetaSample { source, .. }
            | Error::StabilityViolation { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
