//! Outer meta-policy optimization loop.

use std::time::Instant;

use crate::diag::check_maml_stabilizing;
use crate::error::{Error, MamlCondition, Result};
use crate::lqr::{exact_cost, exact_meta_gradient, meta_objective, PolicyGain, TaskSet};
use crate::rng::{Purpose, RngStream, StreamKey};

use super::estimator::{estimate_meta_gradient_with, CostOracle, RolloutCost};
use super::MetaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSource {
    ZerothOrder,
    ExactOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub source: GradientSource,
    /// Check every iterate for MAML stability with exact models and abort on
    /// the first violation.
    pub check_stability: bool,
    /// Attach `||estimate - exact||_F` to each record (zeroth-order only).
    pub report_exact_error: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            source: GradientSource::ZerothOrder,
            check_stability: true,
            report_exact_error: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub policy: PolicyGain,
    pub meta_gradient_norm: f64,
    /// `J_i(K_n) - J_i(K*_i)` per task; infinite when `K_n` destabilizes task `i`.
    pub gaps: Vec<f64>,
    pub ratio: f64,
    /// `None` when stability checks are off.
    pub maml_stabilizing: Option<bool>,
    pub meta_objective: Option<f64>,
    pub exact_error: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningTrace {
    pub optimal_costs: Vec<f64>,
    pub records: Vec<IterationRecord>,
}

impl LearningTrace {
    pub fn ratios(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ratio).collect()
    }

    /// Iterations whose policy failed the MAML-stability check.
    pub fn violations(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.maml_stabilizing == Some(false))
            .map(|r| r.iteration)
            .collect()
    }

    /// Every stored ratio agrees with the one recomputed from its gaps to 1e-12.
    pub fn ratios_consistent(&self) -> bool {
        self.records.iter().all(|r| {
            let again = average_cost_ratio(&r.gaps, &self.optimal_costs);
            again == r.ratio || (again - r.ratio).abs() <= 1e-12 * r.ratio.abs().max(1.0)
        })
    }
}

/// `sum_i gap_i / sum_i J_i(K*_i)` with every task weighted equally.
pub fn average_cost_ratio(gaps: &[f64], optimal_costs: &[f64]) -> f64 {
    gaps.iter().sum::<f64>() / optimal_costs.iter().sum::<f64>()
}

/// Median over each trailing window of `window` values (shorter at the start).
pub fn windowed_median(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let mut w: Vec<f64> = values[i.saturating_sub(window - 1)..=i].to_vec();
            w.sort_by(f64::total_cmp);
            let n = w.len();
            if n % 2 == 1 {
                w[n / 2]
            } else {
                0.5 * (w[n / 2 - 1] + w[n / 2])
            }
        })
        .collect()
}

/// Zeroth-order meta-optimization from rollouts with stability checks on.
pub fn run_meta_optimization(tasks: &TaskSet, k0: &PolicyGain, cfg: &MetaConfig) -> Result<LearningTrace> {
    run_meta_optimization_with(tasks, k0, cfg, RunOptions::default(), &RolloutCost, |_| {})
}

fn iteration_stream(seed: u64, iteration: usize) -> RngStream {
    RngStream::new(StreamKey {
        experiment_seed: seed,
        task_index: 0,
        iteration: iteration as u64,
        perturbation_index: 0,
        purpose: Purpose::Iteration,
    })
}

fn violation(tasks: &TaskSet, k: &PolicyGain, eta: f64, iteration: usize) -> Option<Error> {
    let flags = check_maml_stabilizing(tasks, k, eta);
    let task = flags.iter().position(|ok| !ok)?;
    let t = &tasks.tasks()[task];
    let radius = |gain: &PolicyGain| {
        t.closed_loop(gain)
            .and_then(|f| crate::linalg::spectral_radius(&f))
            .unwrap_or(f64::INFINITY)
    };
    let initial = radius(k);
    let (condition, radius) = if initial >= 1.0 {
        (MamlCondition::Initial, initial)
    } else {
        let adapted = crate::lqr::exact_gradient(t, k)
            .and_then(|g| k.step(&g, eta))
            .map(|ka| radius(&ka))
            .unwrap_or(f64::INFINITY);
        (MamlCondition::Adapted, adapted)
    };
    Some(Error::StabilityViolation {
        iteration,
        source: Box::new(Error::NotMamlStabilizing {
            task,
            condition,
            radius,
        }),
    })
}

/// Runs `K_{n+1} = K_n - alpha * g_n` for up to `max_iterations` steps, where
/// `g_n` is the estimated (or exact) meta-gradient at `K_n`, stopping early
/// once `||g_n||_F <= tolerance`. Iteration `n` draws from the stream keyed by
/// `(seed, n)`. `observer` sees each record as soon as it exists.
///
/// `K_0` must be MAML-stabilizing. With stability checks on, the first
/// violating iterate is recorded, then the run aborts with
/// [`Error::StabilityViolation`].
pub fn run_meta_optimization_with<O, F>(
    tasks: &TaskSet,
    k0: &PolicyGain,
    cfg: &MetaConfig,
    opts: RunOptions,
    oracle: &O,
    mut observer: F,
) -> Result<LearningTrace>
where
    O: CostOracle + ?Sized,
    F: FnMut(&IterationRecord),
{
    cfg.validate()?;
    let eta = cfg.adaptation_rate;
    if let Some(err) = violation(tasks, k0, eta, 0) {
        return Err(err);
    }
    let optimal_costs = tasks
        .tasks()
        .iter()
        .map(|t| exact_cost(t, &t.optimal_gain()?))
        .collect::<Result<Vec<_>>>()?;

    let start = Instant::now();
    let mut records = Vec::new();
    let mut k = k0.clone();
    let mut iteration = 0;
    loop {
        let violated = if opts.check_stability && iteration > 0 {
            violation(tasks, &k, eta, iteration)
        } else {
            None
        };
        let (gradient, exact_error) = if violated.is_some() {
            (None, None)
        } else {
            match opts.source {
                GradientSource::ExactOracle => (Some(exact_meta_gradient(tasks, &k, eta)?), None),
                GradientSource::ZerothOrder => {
                    let report = estimate_meta_gradient_with(
                        oracle,
                        tasks,
                        &k,
                        cfg,
                        iteration_stream(cfg.seed, iteration),
                        opts.report_exact_error,
                    )?;
                    (Some(report.estimate), report.exact_error)
                }
            }
        };

        let gaps: Vec<f64> = tasks
            .tasks()
            .iter()
            .zip(&optimal_costs)
            .map(|(t, j_opt)| exact_cost(t, &k).map_or(f64::INFINITY, |j| j - j_opt))
            .collect();
        let record = IterationRecord {
            iteration,
            policy: k.clone(),
            meta_gradient_norm: gradient.as_ref().map_or(f64::NAN, |g| g.norm()),
            ratio: average_cost_ratio(&gaps, &optimal_costs),
            gaps,
            maml_stabilizing: opts.check_stability.then_some(violated.is_none()),
            meta_objective: if opts.check_stability || opts.source == GradientSource::ExactOracle {
                meta_objective(tasks, &k, eta).ok()
            } else {
                None
            },
            exact_error,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        observer(&record);
        records.push(record);

        if let Some(err) = violated {
            return Err(err);
        }
        let gradient = gradient.expect("gradient computed for a stable iterate");
        if gradient.norm() <= cfg.tolerance || iteration == cfg.max_iterations {
            break;
        }
        k = k.step(&gradient, cfg.learning_rate)?;
        iteration += 1;
    }

    Ok(LearningTrace {
        optimal_costs,
        records,
    })
}
