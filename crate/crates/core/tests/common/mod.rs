//! Random task and gain generators shared by the integration tests.
#![allow(dead_code)]

use metalqr::linalg::spectral_radius;
use metalqr::lqr::is_stable;
use metalqr::{LqrTask, Matrix, PolicyGain, TaskSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `L L^T / n + margin I`
pub fn random_pd<R: Rng>(n: usize, margin: f64, rng: &mut R) -> Matrix {
    let l = gaussian(n, n, rng);
    &l * l.transpose() / n as f64 + Matrix::identity(n, n) * margin
}

/// Open-loop stable task with `rho(A) <= 0.95` and random positive definite weights.
pub fn random_task<R: Rng>(d: usize, k: usize, rng: &mut R) -> LqrTask {
    let mut a = gaussian(d, d, rng) / (d as f64).sqrt();
    let rho = spectral_radius(&a).unwrap();
    let target = rng.random_range(0.3..0.95);
    if rho > 0.0 {
        a *= target / rho;
    }
    let b = gaussian(d, k, rng);
    LqrTask::new(
        a,
        b,
        random_pd(d, 0.2, rng),
        random_pd(k, 0.2, rng),
        random_pd(d, 0.2, rng),
        random_pd(d, 0.5, rng),
    )
    .unwrap()
}

pub fn random_dims<R: Rng>(rng: &mut R) -> (usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=4))
}

/// `K*` moved along a random direction by up to `1 + ||K*||`, halved until stabilizing.
pub fn random_stable_gain<R: Rng>(task: &LqrTask, rng: &mut R) -> PolicyGain {
    let k_opt = task.optimal_gain().unwrap();
    let (rows, cols) = k_opt.matrix().shape();
    let dir = gaussian(rows, cols, rng);
    let dir = &dir / dir.norm();
    let mut radius = rng.random::<f64>() * (1.0 + k_opt.matrix().norm());
    loop {
        let k = k_opt.perturbed(&(&dir * radius)).unwrap();
        if is_stable(task, &k).unwrap() {
            return k;
        }
        radius *= 0.5;
    }
}

/// Tasks sharing the dimensions of one random center, each a small jitter of it.
pub fn random_task_set<R: Rng>(d: usize, k: usize, count: usize, rng: &mut R) -> TaskSet {
    let center = random_task(d, k, rng);
    let tasks = (0..count)
        .map(|_| {
            let mut a = center.a() + gaussian(d, d, rng) * 0.02;
            let rho = spectral_radius(&a).unwrap();
            if rho >= 0.95 {
                a *= 0.95 / rho;
            }
            let b = center.b() + gaussian(d, k, rng) * 0.02;
            LqrTask::new(
                a,
                b,
                center.q().clone(),
                center.r().clone(),
                center.psi().clone(),
                center.sigma0().clone(),
            )
            .unwrap()
        })
        .collect();
    TaskSet::uniform(tasks).unwrap()
}

/// Largest entrywise relative error, denominators floored at 1e-3 of the
/// largest reference entry.
pub fn relative_error(approx: &Matrix, reference: &Matrix) -> f64 {
    let floor = 1e-3 * reference.amax();
    approx
        .iter()
        .zip(reference.iter())
        .map(|(a, r)| (a - r).abs() / r.abs().max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Central differences of a scalar function of a gain, entry by entry.
pub fn central_gradient(k: &PolicyGain, step: f64, f: impl Fn(&PolicyGain) -> f64) -> Matrix {
    let (rows, cols) = k.matrix().shape();
    Matrix::from_fn(rows, cols, |i, j| {
        let mut e = Matrix::zeros(rows, cols);
        e[(i, j)] = step;
        let plus = f(&k.perturbed(&e).unwrap());
        let minus = f(&k.perturbed(&-e).unwrap());
        (plus - minus) / (2.0 * step)
    })
}
