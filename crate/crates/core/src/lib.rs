//! Model-agnostic meta-learning for linear quadratic regulators with
//! zeroth-order (rollout-only) gradient estimates.
//!
//! * [`linalg`]: dense Lyapunov and Riccati solvers.
//! * [`lqr`]: tasks, exact costs, gradients, Hessian actions and the
//!   one-step-adapted meta-objective.
//! * [`rollout`]: trajectory simulation.
//! * [`zoo`]: sphere-smoothing estimators and the outer optimization loop.
//! * [`diag`]: stability and sample-complexity diagnostics.

pub mod diag;
pub mod error;
pub mod linalg;
pub mod lqr;
pub mod rng;
pub mod rollout;
pub mod zoo;

pub use error::{Error, MamlCondition, Result};
pub use linalg::Matrix;
pub use lqr::{LqrTask, PolicyGain, TaskSet};
pub use rng::{Purpose, RngStream, StreamKey};
pub use zoo::{GradientSource, LearningTrace, MetaConfig, RunOptions, SmoothingParams};
