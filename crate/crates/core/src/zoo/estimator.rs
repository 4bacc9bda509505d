//! Sphere-smoothing gradient estimators: single-task policy gradient and the
//! Hessian-free meta-gradient.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lqr::{exact_cost, exact_gradient, exact_meta_gradient, LqrTask, PolicyGain, TaskSet};
use crate::rng::{Purpose, RngStream};
use crate::rollout::rollout_cost;

use super::{GradientReport, MetaConfig, SmoothingParams};

/// Terms per parallel work item. Sums are formed per chunk in index order and
/// then across chunks in index order, so results do not depend on scheduling.
const CHUNK: usize = 64;

/// Source of (possibly noisy) cost values for perturbed gains.
pub trait CostOracle: Sync {
    fn cost(&self, task: &LqrTask, k: &PolicyGain, horizon: usize, rng: RngStream) -> Result<f64>;
}

/// Finite-horizon empirical cost from one simulated trajectory.
#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutCost;

impl CostOracle for RolloutCost {
    fn cost(&self, task: &LqrTask, k: &PolicyGain, horizon: usize, rng: RngStream) -> Result<f64> {
        rollout_cost(task, k, horizon, rng)
    }
}

/// Exact ergodic cost; ignores the horizon and the stream.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactCost;

impl CostOracle for ExactCost {
    fn cost(&self, task: &LqrTask, k: &PolicyGain, _horizon: usize, _rng: RngStream) -> Result<f64> {
        exact_cost(task, k)
    }
}

/// Wraps a closure `(task, K) -> cost`.
pub struct FnCost<F>(pub F);

impl<F> CostOracle for FnCost<F>
where
    F: Fn(&LqrTask, &PolicyGain) -> Result<f64> + Sync,
{
    fn cost(&self, task: &LqrTask, k: &PolicyGain, _horizon: usize, _rng: RngStream) -> Result<f64> {
        (self.0)(task, k)
    }
}

/// Uniform draw from the Frobenius sphere of the given radius.
pub fn sample_sphere<R: Rng + ?Sized>(rows: usize, cols: usize, radius: f64, rng: &mut R) -> Matrix {
    loop {
        let g = Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            return g * (radius / norm);
        }
    }
}

fn ordered_sum<F>(count: usize, shape: (usize, usize), term: F) -> Result<Matrix>
where
    F: Fn(usize) -> Result<Matrix> + Sync,
{
    let partials = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Matrix::zeros(shape.0, shape.1);
            for i in c * CHUNK..((c + 1) * CHUNK).min(count) {
                acc += term(i)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(partials
        .into_iter()
        .fold(Matrix::zeros(shape.0, shape.1), |acc, p| acc + p))
}

/// `(1/M) sum_m (dk / r^2) J(K + U_m) U_m` with `U_m` drawn from
/// `rng.child(Perturbation, m)` and the cost from `rng.child(Rollout, m)`.
fn sphere_gradient<O: CostOracle + ?Sized>(
    oracle: &O,
    task: &LqrTask,
    k: &PolicyGain,
    params: &SmoothingParams,
    rng: &RngStream,
) -> Result<Matrix> {
    let shape = k.matrix().shape();
    let scale = (shape.0 * shape.1) as f64 / (params.radius * params.radius);
    let m = params.num_perturbations;
    let total = ordered_sum(m, shape, |i| {
        let u = sample_sphere(
            shape.0,
            shape.1,
            params.radius,
            &mut rng.child(Purpose::Perturbation, i as u64).into_rng(),
        );
        let cost = k
            .perturbed(&u)
            .and_then(|kp| oracle.cost(task, &kp, params.horizon, rng.child(Purpose::Rollout, i as u64)))
            .map_err(|e| Error::Perturbation {
                index: i,
                source: Box::new(e),
            })?;
        Ok(u * (scale * cost))
    })?;
    Ok(total / m as f64)
}

/// Zeroth-order policy gradient from simulated rollouts.
pub fn estimate_gradient(
    task: &LqrTask,
    k: &PolicyGain,
    params: &SmoothingParams,
    rng: RngStream,
) -> Result<GradientReport> {
    estimate_gradient_with(&RolloutCost, task, k, params, rng, true)
}

/// Zeroth-order policy gradient with an injectable cost oracle. When
/// `report_exact_error` is set and `K` stabilizes the task, the report carries
/// the Frobenius distance to the exact gradient.
pub fn estimate_gradient_with<O: CostOracle + ?Sized>(
    oracle: &O,
    task: &LqrTask,
    k: &PolicyGain,
    params: &SmoothingParams,
    rng: RngStream,
    report_exact_error: bool,
) -> Result<GradientReport> {
    params.validate()?;
    let estimate = sphere_gradient(oracle, task, k, params, &rng)?;
    let exact_error = if report_exact_error {
        exact_gradient(task, k).ok().map(|g| (&estimate - g).norm())
    } else {
        None
    };
    Ok(GradientReport::zeroth_order(
        estimate,
        params.num_perturbations,
        exact_error,
    ))
}

/// Hessian-free meta-gradient from simulated rollouts.
pub fn estimate_meta_gradient(
    tasks: &TaskSet,
    k: &PolicyGain,
    cfg: &MetaConfig,
    rng: RngStream,
) -> Result<GradientReport> {
    estimate_meta_gradient_with(&RolloutCost, tasks, k, cfg, rng, true)
}

/// Task indices for one batch, drawn with replacement from the prior.
pub fn draw_task_batch(tasks: &TaskSet, batch_size: usize, rng: RngStream) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(tasks.weights())
        .map_err(|e| Error::InvalidArgument(format!("task prior: {e}")))?;
    let mut rng = rng.into_rng();
    Ok((0..batch_size).map(|_| dist.sample(&mut rng)).collect())
}

/// For each task in a batch drawn from the prior and each `m`: perturb
/// `K_hat = K + U_m`, adapt `K_m = K_hat - eta * grad~J(K_hat)` with an inner
/// zeroth-order estimate, and weight one rollout cost of `K_m` by `U_m`.
///
/// Stream layout: batch from `rng.child(TaskBatch, 0)`; slot `b` uses
/// `slot = rng.child(BatchSlot, b)` and, per `m`, `slot.child(Perturbation, m)`,
/// `slot.child(InnerEstimate, m)` and `slot.child(Rollout, m)`. With
/// `eta = 0` the inner estimate is skipped and each slot reproduces
/// `estimate_gradient_with(.., slot, ..)` exactly.
pub fn estimate_meta_gradient_with<O: CostOracle + ?Sized>(
    oracle: &O,
    tasks: &TaskSet,
    k: &PolicyGain,
    cfg: &MetaConfig,
    rng: RngStream,
    report_exact_error: bool,
) -> Result<GradientReport> {
    cfg.validate()?;
    let params = &cfg.smoothing;
    let inner = cfg.inner_smoothing();
    let eta = cfg.adaptation_rate;
    let shape = k.matrix().shape();
    let scale = (shape.0 * shape.1) as f64 / (params.radius * params.radius);
    let m_count = params.num_perturbations;

    let batch = draw_task_batch(tasks, cfg.task_batch_size, rng.child(Purpose::TaskBatch, 0))?;
    let mut total = Matrix::zeros(shape.0, shape.1);
    for (slot, &task_index) in batch.iter().enumerate() {
        let task = &tasks.tasks()[task_index];
        let slot_rng = rng.child(Purpose::BatchSlot, slot as u64);
        let slot_sum = ordered_sum(m_count, shape, |i| {
            let wrap = |e: Error| Error::MetaSample {
                task: task_index,
                perturbation: i,
                source: Box::new(e),
            };
            let u = sample_sphere(
                shape.0,
                shape.1,
                params.radius,
                &mut slot_rng.child(Purpose::Perturbation, i as u64).into_rng(),
            );
            let perturbed = k.perturbed(&u).map_err(wrap)?;
            let adapted = if eta == 0.0 {
                perturbed
            } else {
                let inner_grad = sphere_gradient(
                    oracle,
                    task,
                    &perturbed,
                    &inner,
                    &slot_rng.child(Purpose::InnerEstimate, i as u64),
                )
                .map_err(wrap)?;
                perturbed.step(&inner_grad, eta).map_err(wrap)?
            };
            let cost = oracle
                .cost(task, &adapted, params.horizon, slot_rng.child(Purpose::Rollout, i as u64))
                .map_err(wrap)?;
            Ok(u * (scale * cost))
        })?;
        total += slot_sum / m_count as f64;
    }
    let estimate = total / batch.len() as f64;

    let exact_error = if report_exact_error {
        exact_meta_gradient(tasks, k, eta)
            .ok()
            .map(|g| (&estimate - g).norm())
    } else {
        None
    };
    let inner_calls = if eta == 0.0 { 0 } else { inner.num_perturbations };
    Ok(GradientReport::zeroth_order(
        estimate,
        batch.len() * m_count * (inner_calls + 1),
        exact_error,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::rollout;

    fn scalar_task() -> LqrTask {
        LqrTask::scalar(0.9, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn sphere_draws_have_exact_radius() {
        let mut rng = RngStream::from_seed(5).into_rng();
        for _ in 0..100 {
            let u = sample_sphere(3, 2, 0.7, &mut rng);
            assert!((u.norm() - 0.7).abs() < 1e-12 * 0.7);
        }
    }

    #[test]
    fn single_perturbation_replays() {
        let task = scalar_task();
        let k = PolicyGain::scalar(0.5).unwrap();
        let params = SmoothingParams::new(0.05, 1, 30).unwrap();
        let rng = RngStream::from_seed(77);
        let report = estimate_gradient(&task, &k, &params, rng.clone()).unwrap();

        let u = sample_sphere(1, 1, 0.05, &mut rng.child(Purpose::Perturbation, 0).into_rng());
        let j = rollout(&task, &k.perturbed(&u).unwrap(), 30, rng.child(Purpose::Rollout, 0))
            .unwrap()
            .empirical_cost();
        let expected = u * (1.0 / (0.05 * 0.05) * j);
        assert_eq!(report.estimate, expected);
        assert_eq!(report.samples_used, 1);
        assert!(report.exact_error.is_some());
    }

    #[test]
    fn exact_error_absent_for_unstable_gain() {
        let task = scalar_task();
        let k = PolicyGain::scalar(-0.5).unwrap();
        let params = SmoothingParams::new(0.05, 4, 10).unwrap();
        let report = estimate_gradient(&task, &k, &params, RngStream::from_seed(1)).unwrap();
        assert!(report.exact_error.is_none());
    }

    #[test]
    fn exact_oracle_reports_perturbation_index() {
        // K = 1.85 sits 0.05 from the stability edge; radius 0.2 crosses it
        let params = SmoothingParams::new(0.2, 16, 10).unwrap();
        let err = estimate_gradient_with(
            &ExactCost,
            &scalar_task(),
            &PolicyGain::scalar(1.85).unwrap(),
            &params,
            RngStream::from_seed(1),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Perturbation { .. }));
        assert!(matches!(err.root(), Error::Unstable { .. }));
    }

    #[test]
    fn zero_rate_meta_gradient_is_batch_average_of_gradients() {
        let tasks = TaskSet::uniform(vec![
            scalar_task(),
            LqrTask::scalar(0.6, 0.8, 1.0, 2.0, 1.0, 1.0).unwrap(),
        ])
        .unwrap();
        let k = PolicyGain::scalar(0.3).unwrap();
        let mut cfg = MetaConfig::fig1_small(3);
        cfg.adaptation_rate = 0.0;
        cfg.task_batch_size = 3;
        cfg.smoothing = SmoothingParams::new(0.05, 20, 25).unwrap();
        let rng = RngStream::from_seed(11);
        let meta = estimate_meta_gradient(&tasks, &k, &cfg, rng.clone()).unwrap();

        let batch = draw_task_batch(&tasks, 3, rng.child(Purpose::TaskBatch, 0)).unwrap();
        let mut total = Matrix::zeros(1, 1);
        for (slot, &i) in batch.iter().enumerate() {
            let slot_rng = rng.child(Purpose::BatchSlot, slot as u64);
            total += estimate_gradient(&tasks.tasks()[i], &k, &cfg.smoothing, slot_rng)
                .unwrap()
                .estimate;
        }
        assert_eq!(meta.estimate, total / 3.0);
    }

    #[test]
    fn identical_tasks_match_single_task_run() {
        let k = PolicyGain::scalar(0.5).unwrap();
        let mut cfg = MetaConfig::fig1_small(3);
        cfg.adaptation_rate = 0.01;
        cfg.task_batch_size = 3;
        cfg.smoothing = SmoothingParams::new(0.05, 8, 20).unwrap();
        cfg.inner_perturbations = Some(8);
        let single = TaskSet::uniform(vec![scalar_task()]).unwrap();
        let triple = TaskSet::uniform(vec![scalar_task(), scalar_task(), scalar_task()]).unwrap();
        let a = estimate_meta_gradient(&single, &k, &cfg, RngStream::from_seed(4)).unwrap();
        let b = estimate_meta_gradient(&triple, &k, &cfg, RngStream::from_seed(4)).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.samples_used, 3 * 8 * 9);
    }

    #[test]
    fn linear_cost_recovers_coefficients() {
        // E[(dk/r^2) <C, K + U> U] = C for U uniform on the sphere
        let c = Matrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let oracle = FnCost(|_: &LqrTask, k: &PolicyGain| Ok(k.matrix().dot(&c)));
        let task = LqrTask::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let k = PolicyGain::new(Matrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4])).unwrap();
        let m = 20_000;
        let r = 0.1;
        let params = SmoothingParams::new(r, m, 1).unwrap();
        let est = estimate_gradient_with(&oracle, &task, &k, &params, RngStream::from_seed(8), false)
            .unwrap()
            .estimate;
        // Per-sample std of an entry is bounded by (dk/r^2) * |<C,K+U>| * r / sqrt(dk)
        let bound = (4.0 / (r * r)) * (k.matrix().dot(&c).abs() + c.norm() * r) * r / 2.0;
        let se = bound / (m as f64).sqrt();
        for (e, t) in est.iter().zip(c.iter()) {
            assert!((e - t).abs() < 3.0 * se, "{e} vs {t} (se {se})");
        }
    }
}
