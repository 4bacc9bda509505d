//! Closed-loop trajectory simulation and finite-horizon cost estimates.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, row_major, Matrix};
use crate::lqr::{LqrTask, PolicyGain};
use crate::rng::RngStream;

/// Any state with norm above this aborts the rollout.
pub const DIVERGENCE_THRESHOLD: f64 = 1e150;

/// Empirical averages over the states `x_1 .. x_l` of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    empirical_cost: f64,
    empirical_gramian: Matrix,
    horizon: usize,
}

impl RolloutResult {
    /// Checks `cost = Tr(gramian (Q + K^T R K))` to 1e-10 relative.
    pub fn new(empirical_cost: f64, empirical_gramian: Matrix, horizon: usize, stage_cost: &Matrix) -> Result<Self> {
        let via_gramian = linalg::trace_of_product(&empirical_gramian, stage_cost);
        if (via_gramian - empirical_cost).abs() > 1e-10 * empirical_cost.abs().max(1.0) {
            return Err(Error::Internal(
                "rollout cost disagrees with its Gramian",
            ));
        }
        Ok(Self {
            empirical_cost,
            empirical_gramian,
            horizon,
        })
    }

    pub fn empirical_cost(&self) -> f64 {
        self.empirical_cost
    }
    pub fn empirical_gramian(&self) -> &Matrix {
        &self.empirical_gramian
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Simulates `x_{t+1} = (A - B K) x_t + w_t` from `x_0 ~ N(0, Sigma0)` with
/// `w_t ~ N(0, Psi)` and averages over `l = 1 ..= horizon`.
///
/// `K` need not be stabilizing; only overflow is an error.
pub fn rollout(task: &LqrTask, k: &PolicyGain, horizon: usize, rng: RngStream) -> Result<RolloutResult> {
    let d = task.state_dim();
    let stage = task.stage_cost_matrix(k)?;
    let mut gram = vec![0.0; d * d];
    let cost = simulate(task, k, horizon, rng, Some(&mut gram))?;
    let gramian = Matrix::from_row_slice(d, d, &gram) / horizon as f64;
    RolloutResult::new(cost, gramian, horizon, &stage)
}

/// The empirical cost of [`rollout`] for the same stream, without the Gramian.
pub fn rollout_cost(task: &LqrTask, k: &PolicyGain, horizon: usize, rng: RngStream) -> Result<f64> {
    simulate(task, k, horizon, rng, None)
}

fn simulate(
    task: &LqrTask,
    k: &PolicyGain,
    horizon: usize,
    rng: RngStream,
    mut gram: Option<&mut [f64]>,
) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    let d = task.state_dim();
    let closed = row_major(&task.closed_loop(k)?);
    let stage = row_major(&task.stage_cost_matrix(k)?);
    let noise = row_major(task.noise_factor());
    let init = row_major(task.init_factor());
    let mut rng = rng.into_rng();

    let mut z = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut cost = 0.0;

    for zi in z.iter_mut() {
        *zi = StandardNormal.sample(&mut rng);
    }
    for i in 0..d {
        x[i] = (0..d).map(|j| init[i * d + j] * z[j]).sum();
    }

    for step in 1..=horizon {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let mut norm_sq = 0.0;
        for (i, out) in next.iter_mut().enumerate() {
            let row = i * d..(i + 1) * d;
            let mut v = 0.0;
            for ((f, w), (xj, zj)) in closed[row.clone()].iter().zip(&noise[row]).zip(x.iter().zip(&z)) {
                v += f * xj + w * zj;
            }
            *out = v;
            norm_sq += v * v;
        }
        std::mem::swap(&mut x, &mut next);

        if !(norm_sq.is_finite() && norm_sq <= DIVERGENCE_THRESHOLD * DIVERGENCE_THRESHOLD) {
            return Err(Error::Divergence { step });
        }
        for i in 0..d {
            let row = &stage[i * d..(i + 1) * d];
            cost += x[i] * row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(g) = gram.as_deref_mut() {
            for i in 0..d {
                for j in 0..d {
                    g[i * d + j] += x[i] * x[j];
                }
            }
        }
    }
    Ok(cost / horizon as f64)
}

/// Exact expectation of [`rollout`]'s empirical cost, by propagating the state
/// covariance `S_{t+1} = (A-BK) S_t (A-BK)^T + Psi` from `S_0 = Sigma0`.
pub fn expected_finite_horizon_cost(task: &LqrTask, k: &PolicyGain, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    let closed = task.closed_loop(k)?;
    let radius = linalg::spectral_radius(&closed)?;
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }
    let stage = task.stage_cost_matrix(k)?;
    let closed_t = closed.transpose();
    let mut s = task.sigma0().clone();
    let mut total = 0.0;
    for _ in 0..horizon {
        s = &closed * &s * &closed_t + task.psi();
        total += linalg::trace_of_product(&stage, &s);
    }
    Ok(total / horizon as f64)
}
