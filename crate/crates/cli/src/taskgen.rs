//! Random task collections centered on a common system.

use metalqr::linalg::{self, min_symmetric_eigenvalue, spectral_radius, symmetrize};
use metalqr::lqr::exact_meta_gradient;
use metalqr::{Error, LqrTask, Matrix, PolicyGain, Purpose, Result, RngStream, StreamKey, TaskSet};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub const MAX_ATTEMPTS: u64 = 100;
/// Eigenvalue floor left after the positive-definiteness repair.
pub const PD_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskGenSpec {
    pub d: usize,
    pub k: usize,
    pub num_tasks: usize,
    #[serde(default = "default_low")]
    pub center_entry_low: f64,
    #[serde(default = "default_high")]
    pub center_entry_high: f64,
    #[serde(default = "default_std")]
    pub perturbation_std: f64,
    #[serde(default = "default_spectral_target")]
    pub spectral_target: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_low() -> f64 {
    -1.0
}
fn default_high() -> f64 {
    1.0
}
fn default_std() -> f64 {
    0.25
}
fn default_spectral_target() -> f64 {
    0.9
}

impl TaskGenSpec {
    pub fn new(d: usize, k: usize, num_tasks: usize, seed: u64) -> Self {
        Self {
            d,
            k,
            num_tasks,
            center_entry_low: default_low(),
            center_entry_high: default_high(),
            perturbation_std: default_std(),
            spectral_target: default_spectral_target(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::InvalidArgument(format!("taskgen.{field}: {why}")));
        if self.d == 0 {
            return bad("d", "must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k", "must be at least 1".into());
        }
        if self.num_tasks == 0 {
            return bad("num_tasks", "must be at least 1".into());
        }
        if !(self.center_entry_low.is_finite()
            && self.center_entry_high.is_finite()
            && self.center_entry_low < self.center_entry_high)
        {
            return bad(
                "center_entry_low",
                format!(
                    "need finite low < high, got [{}, {}]",
                    self.center_entry_low, self.center_entry_high
                ),
            );
        }
        if !(self.perturbation_std.is_finite() && self.perturbation_std >= 0.0) {
            return bad("perturbation_std", format!("must be nonnegative, got {}", self.perturbation_std));
        }
        if !(self.spectral_target > 0.0 && self.spectral_target < 1.0) {
            return bad("spectral_target", format!("must lie in (0, 1), got {}", self.spectral_target));
        }
        Ok(())
    }
}

/// Raw system matrices before repair.
struct Draft {
    a: Matrix,
    b: Matrix,
    q: Matrix,
    r: Matrix,
    psi: Matrix,
}

fn uniform_draft<R: Rng>(spec: &TaskGenSpec, rng: &mut R) -> Draft {
    let dist = Uniform::new(spec.center_entry_low, spec.center_entry_high).expect("validated range");
    let mut draw = |rows, cols| Matrix::from_fn(rows, cols, |_, _| dist.sample(rng));
    Draft {
        a: draw(spec.d, spec.d),
        b: draw(spec.d, spec.k),
        q: draw(spec.d, spec.d),
        r: draw(spec.k, spec.k),
        psi: draw(spec.d, spec.d),
    }
}

fn jitter<R: Rng>(center: &Draft, std: f64, rng: &mut R) -> Draft {
    let normal = Normal::new(0.0, std).expect("validated std");
    let mut around = |m: &Matrix| m.map(|c| c + normal.sample(rng));
    Draft {
        a: around(&center.a),
        b: around(&center.b),
        q: around(&center.q),
        r: around(&center.r),
        psi: around(&center.psi),
    }
}

fn make_pd(m: &Matrix) -> Matrix {
    let sym = symmetrize(m);
    let low = min_symmetric_eigenvalue(&sym);
    if low > 0.0 {
        sym
    } else {
        let n = sym.nrows();
        sym + Matrix::identity(n, n) * (low.abs() + PD_MARGIN)
    }
}

fn repair(draft: Draft, target: f64) -> Result<Draft> {
    let rho = spectral_radius(&draft.a)?;
    let a = if rho >= target { &draft.a * (target / rho) } else { draft.a };
    Ok(Draft {
        a,
        b: draft.b,
        q: make_pd(&draft.q),
        r: make_pd(&draft.r),
        psi: make_pd(&draft.psi),
    })
}

fn into_task(draft: Draft) -> Result<LqrTask> {
    let n = draft.a.nrows();
    LqrTask::new(draft.a, draft.b, draft.q, draft.r, draft.psi, Matrix::identity(n, n))
}

fn attempt(spec: &TaskGenSpec, eta: f64, stream: RngStream) -> Result<TaskSet> {
    let mut rng = stream.into_rng();
    let center = repair(uniform_draft(spec, &mut rng), spec.spectral_target)?;
    let mut tasks = Vec::with_capacity(spec.num_tasks);
    for _ in 0..spec.num_tasks {
        tasks.push(into_task(repair(jitter(&center, spec.perturbation_std, &mut rng), spec.spectral_target)?)?);
    }
    let set = TaskSet::uniform(tasks)?;
    let k0 = PolicyGain::zeros(spec.k, spec.d);
    for task in set.tasks() {
        let radius = linalg::spectral_radius(&task.closed_loop(&k0)?)?;
        if radius >= 1.0 {
            return Err(Error::Unstable { radius });
        }
        task.optimal()?;
    }
    exact_meta_gradient(&set, &k0, eta)?;
    Ok(set)
}

/// Draws a center system uniformly, rescales `A` below the spectral target,
/// symmetrizes and shifts `Q`, `R`, `Psi` to positive definite, then jitters
/// each task around the center and repairs it the same way. `Sigma0 = I`.
///
/// A draw is accepted when `K = 0` stabilizes every task and the meta-gradient
/// at `K = 0` is defined for adaptation rate `eta`; otherwise a fresh stream is
/// used, up to [`MAX_ATTEMPTS`] times.
pub fn generate_tasks(spec: &TaskGenSpec, eta: f64) -> Result<TaskSet> {
    spec.validate()?;
    let mut last = None;
    for n in 0..MAX_ATTEMPTS {
        let stream = RngStream::new(StreamKey {
            experiment_seed: spec.seed,
            task_index: 0,
            iteration: n,
            perturbation_index: 0,
            purpose: Purpose::TaskGeneration,
        });
        match attempt(spec, eta, stream) {
            Ok(set) => return Ok(set),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::InvalidArgument(format!(
        "no admissible task set in {MAX_ATTEMPTS} attempts (last failure: {}); try a smaller perturbation_std",
        last.expect("at least one attempt")
    )))
}
