//! Zeroth-order policy and meta-policy optimization.

mod estimator;
mod optimizer;

pub use estimator::{
    draw_task_batch, estimate_gradient, estimate_gradient_with, estimate_meta_gradient,
    estimate_meta_gradient_with, sample_sphere, CostOracle, ExactCost, FnCost, RolloutCost,
};
pub use optimizer::{
    average_cost_ratio, run_meta_optimization, run_meta_optimization_with, windowed_median,
    GradientSource, IterationRecord, LearningTrace, RunOptions,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Sphere radius `r`, perturbation count `M` and rollout length `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub radius: f64,
    pub num_perturbations: usize,
    pub horizon: usize,
}

impl SmoothingParams {
    pub fn new(radius: f64, num_perturbations: usize, horizon: usize) -> Result<Self> {
        let params = Self {
            radius,
            num_perturbations,
            horizon,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing radius must be positive and finite, got {}",
                self.radius
            )));
        }
        if self.num_perturbations == 0 {
            return Err(Error::InvalidArgument("num_perturbations must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    ZerothOrder,
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub estimate: Matrix,
    pub method: EstimateMethod,
    /// Cost-oracle calls spent on the estimate.
    pub samples_used: usize,
    /// `||estimate - exact||_F`, when the exact gradient is defined.
    pub exact_error: Option<f64>,
}

impl GradientReport {
    pub fn zeroth_order(estimate: Matrix, samples_used: usize, exact_error: Option<f64>) -> Self {
        Self {
            estimate,
            method: EstimateMethod::ZerothOrder,
            samples_used,
            exact_error,
        }
    }

    pub fn exact(gradient: Matrix) -> Self {
        Self {
            estimate: gradient,
            method: EstimateMethod::Exact,
            samples_used: 0,
            exact_error: None,
        }
    }
}

/// Settings of the outer meta-optimization loop and its estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    /// Inner adaptation step `eta`. Zero disables adaptation.
    pub adaptation_rate: f64,
    /// Outer step `alpha`.
    pub learning_rate: f64,
    pub smoothing: SmoothingParams,
    /// Perturbations of the inner estimate; `None` reuses `smoothing.num_perturbations`.
    pub inner_perturbations: Option<usize>,
    pub task_batch_size: usize,
    pub max_iterations: usize,
    /// Stop once the meta-gradient norm is at or below this. May be infinite.
    pub tolerance: f64,
    pub seed: u64,
}

impl MetaConfig {
    /// Settings for the low-dimensional (d <= 2) learning curves.
    pub fn fig1_small(seed: u64) -> Self {
        Self {
            adaptation_rate: 1e-5,
            learning_rate: 1e-3,
            smoothing: SmoothingParams {
                radius: 0.05,
                num_perturbations: 100,
                horizon: 50,
            },
            inner_perturbations: None,
            task_batch_size: 5,
            max_iterations: 1000,
            tolerance: 0.0,
            seed,
        }
    }

    /// Settings for the d = 20 learning curve.
    pub fn fig1_large(seed: u64) -> Self {
        Self {
            adaptation_rate: 1e-7,
            learning_rate: 1e-5,
            ..Self::fig1_small(seed)
        }
    }

    pub fn inner_smoothing(&self) -> SmoothingParams {
        SmoothingParams {
            num_perturbations: self.inner_perturbations.unwrap_or(self.smoothing.num_perturbations),
            ..self.smoothing
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        if !(self.adaptation_rate.is_finite() && self.adaptation_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "adaptation_rate must be finite and nonnegative, got {}",
                self.adaptation_rate
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.inner_perturbations == Some(0) {
            return Err(Error::InvalidArgument("inner_perturbations must be at least 1".into()));
        }
        if self.task_batch_size == 0 {
            return Err(Error::InvalidArgument("task_batch_size must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be nonnegative, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}
