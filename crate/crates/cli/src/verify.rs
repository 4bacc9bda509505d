//! Cross-oracle property battery run against one task set.

use std::fs;
use std::path::Path;

use metalqr::diag::{check_maml_stabilizing, gradient_domination_constant, rollout_length_bound, trust_radius, GradientDomination};
use metalqr::linalg::{spectral_radius, trace_of_product};
use metalqr::lqr::{evaluate_policy, exact_cost, exact_gradient, exact_hessian_action, exact_meta_gradient, is_stable, meta_objective};
use metalqr::rollout::{expected_finite_horizon_cost, rollout_cost};
use metalqr::zoo::{estimate_gradient_with, sample_sphere, ExactCost};
use metalqr::{LqrTask, Matrix, MetaConfig, PolicyGain, Purpose, RngStream, SmoothingParams, TaskSet};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ExperimentSpec;
use crate::run::load_or_generate;
use crate::CliError;

pub const REPORT_FILE: &str = "verify.csv";

/// Finite-difference step for the derivative checks.
const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;
/// Width, in standard errors, of the Monte-Carlo acceptance bands.
const SIGMA_BAND: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Recorded but never counted as a failure.
    pub informational: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl PropertyResult {
    fn check(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: measured <= tolerance,
            informational: false,
            measured,
            tolerance,
            detail,
        }
    }

    fn info(name: &str, measured: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: true,
            informational: true,
            measured,
            tolerance: f64::NAN,
            detail,
        }
    }
}

/// `K* + Delta` with `Delta` in a random direction, its norm drawn uniformly
/// up to `1 + ||K*||` and halved until the gain stabilizes the task.
pub fn random_stable_gain<R: Rng>(task: &LqrTask, rng: &mut R) -> metalqr::Result<PolicyGain> {
    let k_opt = task.optimal_gain()?;
    let (rows, cols) = k_opt.matrix().shape();
    let mut radius = rng.random::<f64>() * (1.0 + k_opt.matrix().norm());
    let direction = sample_sphere(rows, cols, 1.0, rng);
    loop {
        let k = k_opt.perturbed(&(&direction * radius))?;
        if is_stable(task, &k)? {
            return Ok(k);
        }
        radius *= 0.5;
    }
}

/// Largest entrywise relative error, with denominators floored at 1e-3 of
/// the largest reference entry.
pub fn relative_error(approx: &Matrix, reference: &Matrix) -> f64 {
    let floor = 1e-3 * reference.amax();
    approx
        .iter()
        .zip(reference.iter())
        .map(|(a, r)| (a - r).abs() / r.abs().max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn central_difference<F>(k: &PolicyGain, f: F) -> metalqr::Result<Matrix>
where
    F: Fn(&PolicyGain) -> metalqr::Result<f64>,
{
    let (rows, cols) = k.matrix().shape();
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut e = Matrix::zeros(rows, cols);
            e[(i, j)] = FD_STEP;
            out[(i, j)] = (f(&k.perturbed(&e)?)? - f(&k.perturbed(&-e)?)?) / (2.0 * FD_STEP);
        }
    }
    Ok(out)
}

struct Worst {
    value: f64,
    errors: Vec<String>,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: 0.0,
            errors: Vec::new(),
        }
    }

    fn push(&mut self, r: metalqr::Result<f64>) {
        match r {
            Ok(v) if v.is_finite() => self.value = self.value.max(v),
            Ok(_) => self.value = f64::INFINITY,
            Err(e) => {
                self.value = f64::INFINITY;
                self.errors.push(e.to_string());
            }
        }
    }

    fn detail(&self, cases: usize) -> String {
        match self.errors.first() {
            Some(e) => format!("{cases} cases; first error: {e}"),
            None => format!("{cases} cases"),
        }
    }
}

/// Runs every property on `tasks`. `meta` supplies the adaptation rate and
/// the rollout horizon; `seed` keys all random draws.
pub fn run_battery(tasks: &TaskSet, meta: &MetaConfig, seed: u64) -> Vec<PropertyResult> {
    let root = RngStream::from_seed(seed).child(Purpose::Verification, 0);
    let eta = meta.adaptation_rate;
    let samples_per_task = 5;
    let mut gains = Vec::new();
    for (i, task) in tasks.tasks().iter().enumerate() {
        let mut rng = root.child(Purpose::Custom, i as u64).into_rng();
        for _ in 0..samples_per_task {
            if let Ok(k) = random_stable_gain(task, &mut rng) {
                gains.push((i, k));
            }
        }
    }
    let cases = gains.len();
    let mut out = Vec::new();

    let mut grad = Worst::new();
    let mut hess = Worst::new();
    let mut identity = Worst::new();
    for (n, (i, k)) in gains.iter().enumerate() {
        let task = &tasks.tasks()[*i];
        grad.push(exact_gradient(task, k).and_then(|g| {
            let fd = central_difference(k, |kk| exact_cost(task, kk))?;
            Ok(relative_error(&fd, &g))
        }));
        let mut rng = root.child(Purpose::Perturbation, n as u64).into_rng();
        let (rows, cols) = k.matrix().shape();
        let x = Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        hess.push(exact_hessian_action(task, k, &x).and_then(|h| {
            let plus = exact_gradient(task, &k.perturbed(&(&x * FD_STEP))?)?;
            let minus = exact_gradient(task, &k.perturbed(&(&x * -FD_STEP))?)?;
            Ok(relative_error(&((plus - minus) / (2.0 * FD_STEP)), &h))
        }));
        identity.push(evaluate_policy(task, k).and_then(|e| {
            let via_gramian = trace_of_product(&task.stage_cost_matrix(k)?, &e.sigma);
            Ok((e.cost - via_gramian).abs() / e.cost.abs())
        }));
    }
    out.push(PropertyResult::check("gradient_vs_finite_difference", grad.value, FD_TOLERANCE, grad.detail(cases)));
    out.push(PropertyResult::check("hessian_action_vs_finite_difference", hess.value, FD_TOLERANCE, hess.detail(cases)));
    out.push(PropertyResult::check("cost_formula_identity", identity.value, 1e-8, identity.detail(cases)));

    let k0 = PolicyGain::zeros(tasks.control_dim(), tasks.state_dim());
    let mut meta_fd = Worst::new();
    meta_fd.push(exact_meta_gradient(tasks, &k0, eta).and_then(|g| {
        let fd = central_difference(&k0, |kk| meta_objective(tasks, kk, eta))?;
        Ok(relative_error(&fd, &g))
    }));
    out.push(PropertyResult::check(
        "meta_gradient_vs_finite_difference",
        meta_fd.value,
        FD_TOLERANCE,
        meta_fd.detail(1),
    ));

    let mut optimality = Worst::new();
    for task in tasks.tasks() {
        optimality.push(task.optimal_gain().and_then(|k| {
            let radius = spectral_radius(&task.closed_loop(&k)?)?;
            Ok(if radius < 1.0 { exact_gradient(task, &k)?.norm() } else { f64::INFINITY })
        }));
    }
    out.push(PropertyResult::check("riccati_optimality", optimality.value, 1e-7, optimality.detail(tasks.len())));

    let flags = check_maml_stabilizing(tasks, &k0, eta);
    let bad = flags.iter().filter(|f| !**f).count();
    out.push(PropertyResult::check(
        "initial_policy_maml_stabilizing",
        bad as f64,
        0.0,
        format!("{} tasks at eta = {eta}", flags.len()),
    ));

    out.push(rollout_mean(tasks, &k0, meta.smoothing.horizon, &root));
    out.push(estimator_mean(tasks, &k0, &root));
    out.extend(domination(tasks, &root));
    out.push(trust_region(tasks, &k0, &root));
    out.push(rollout_length(tasks, &k0));
    out
}

/// Mean of rollout costs against the exact finite-horizon expectation.
fn rollout_mean(tasks: &TaskSet, k: &PolicyGain, horizon: usize, root: &RngStream) -> PropertyResult {
    let n = 400;
    let mut worst = Worst::new();
    for (i, task) in tasks.tasks().iter().enumerate() {
        let stream = root.child(Purpose::Rollout, i as u64);
        worst.push((|| {
            let costs = (0..n)
                .map(|m| rollout_cost(task, k, horizon, stream.child(Purpose::Rollout, m)))
                .collect::<metalqr::Result<Vec<_>>>()?;
            let mean = costs.iter().sum::<f64>() / n as f64;
            let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = expected_finite_horizon_cost(task, k, horizon)?;
            Ok((mean - expected).abs() / (var / n as f64).sqrt())
        })());
    }
    PropertyResult::check(
        "rollout_mean_vs_expected_cost",
        worst.value,
        SIGMA_BAND,
        format!("{n} rollouts of length {horizon} per task; measured in standard errors"),
    )
}

/// Sphere estimator with exact costs, against the exact gradient, in units
/// of the batch-mean standard error.
fn estimator_mean(tasks: &TaskSet, k: &PolicyGain, root: &RngStream) -> PropertyResult {
    let task = &tasks.tasks()[0];
    let batches = 20;
    let per_batch = if task.state_dim() <= 4 { 1000 } else { 50 };
    let params = SmoothingParams {
        radius: 0.05,
        num_perturbations: per_batch,
        horizon: 1,
    };
    let result = (|| {
        let exact = exact_gradient(task, k)?;
        let estimates = (0..batches)
            .map(|b| {
                estimate_gradient_with(&ExactCost, task, k, &params, root.child(Purpose::InnerEstimate, b), false)
                    .map(|r| r.estimate)
            })
            .collect::<metalqr::Result<Vec<_>>>()?;
        let mean = estimates.iter().fold(Matrix::zeros(exact.nrows(), exact.ncols()), |a, e| a + e) / batches as f64;
        let var: f64 = estimates.iter().map(|e| (e - &mean).norm_squared()).sum::<f64>() / (batches - 1) as f64;
        let se = (var / batches as f64).sqrt();
        Ok::<_, metalqr::Error>(((&mean - &exact).norm(), se))
    })();
    match result {
        Ok((err, se)) => PropertyResult::check(
            "zeroth_order_estimate_vs_exact",
            err / se,
            SIGMA_BAND,
            format!("task 0, {batches} x {per_batch} perturbations, r = 0.05; error {err:.4e}, standard error {se:.4e}"),
        ),
        Err(e) => PropertyResult::check("zeroth_order_estimate_vs_exact", f64::INFINITY, SIGMA_BAND, e.to_string()),
    }
}

fn domination(tasks: &TaskSet, root: &RngStream) -> Vec<PropertyResult> {
    let per_task = 50;
    let mut violations_noise = 0usize;
    let mut violations_initial = 0usize;
    let mut errors = Vec::new();
    for (i, task) in tasks.tasks().iter().enumerate() {
        let mut rng = root.child(Purpose::TaskBatch, i as u64).into_rng();
        let outcome = (|| {
            let dom = gradient_domination_constant(task)?;
            for _ in 0..per_task {
                let k = random_stable_gain(task, &mut rng)?;
                let (gap, bound) = GradientDomination::sides(task, &k, dom.lambda_noise)?;
                violations_noise += usize::from(gap > bound);
                let (gap, bound) = GradientDomination::sides(task, &k, dom.lambda_initial)?;
                violations_initial += usize::from(gap > bound);
            }
            Ok::<_, metalqr::Error>(())
        })();
        if let Err(e) = outcome {
            errors.push(e.to_string());
        }
    }
    let measured = if errors.is_empty() { violations_noise as f64 } else { f64::INFINITY };
    vec![
        PropertyResult::check(
            "gradient_domination_noise_floor",
            measured,
            0.0,
            format!("{per_task} gains per task, mu = sigma_min(Psi); {}", errors.join("; ")),
        ),
        PropertyResult::info(
            "gradient_domination_initial_floor",
            violations_initial as f64,
            format!("violations with mu = sigma_min(Sigma0), {per_task} gains per task"),
        ),
    ]
}

fn trust_region(tasks: &TaskSet, k: &PolicyGain, root: &RngStream) -> PropertyResult {
    let draws = 50;
    let outcome = (|| {
        let h = trust_radius(tasks, k)?;
        let mut rng = root.child(Purpose::Custom, u64::MAX).into_rng();
        let (rows, cols) = k.matrix().shape();
        let mut unstable = 0;
        for _ in 0..draws {
            let kp = k.perturbed(&sample_sphere(rows, cols, h, &mut rng))?;
            for task in tasks.tasks() {
                unstable += usize::from(!is_stable(task, &kp)?);
            }
        }
        Ok::<_, metalqr::Error>((h, unstable))
    })();
    match outcome {
        Ok((h, unstable)) => PropertyResult::check(
            "trust_radius_keeps_stability",
            unstable as f64,
            0.0,
            format!("{draws} perturbations of norm {h:.4e} at K = 0"),
        ),
        Err(e) => PropertyResult::check("trust_radius_keeps_stability", f64::INFINITY, 0.0, e.to_string()),
    }
}

fn rollout_length(tasks: &TaskSet, k: &PolicyGain) -> PropertyResult {
    let epsilon = 0.1;
    let cap = 200_000;
    let outcome = (|| {
        let l = rollout_length_bound(tasks, k, epsilon)?;
        if l > cap {
            return Ok(None);
        }
        let mut worst: f64 = 0.0;
        for task in tasks.tasks() {
            let gap = (expected_finite_horizon_cost(task, k, l as usize)? - exact_cost(task, k)?).abs();
            worst = worst.max(gap);
        }
        Ok::<_, metalqr::Error>(Some((l, worst)))
    })();
    match outcome {
        Ok(Some((l, worst))) => PropertyResult::check(
            "rollout_length_bound_accuracy",
            worst,
            epsilon,
            format!("bound l = {l} at K = 0"),
        ),
        Ok(None) => PropertyResult::info(
            "rollout_length_bound_accuracy",
            f64::NAN,
            format!("bound exceeds {cap} steps; not evaluated"),
        ),
        Err(e) => PropertyResult::check("rollout_length_bound_accuracy", f64::INFINITY, epsilon, e.to_string()),
    }
}

pub fn write_report(path: &Path, results: &[PropertyResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    w.write_record(["property", "status", "measured", "tolerance", "detail"])
        .map_err(|e| CliError::io(path, e.into()))?;
    for r in results {
        let status = match (r.informational, r.passed) {
            (true, _) => "info",
            (false, true) => "pass",
            (false, false) => "fail",
        };
        w.write_record([r.name.as_str(), status, &format!("{:e}", r.measured), &format!("{:e}", r.tolerance), &r.detail])
            .map_err(|e| CliError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Runs the battery on the experiment's task set and writes `verify.csv`.
pub fn verify(spec: &ExperimentSpec) -> Result<Vec<PropertyResult>, CliError> {
    spec.validate()?;
    let tasks = load_or_generate(spec)?;
    fs::create_dir_all(&spec.outputs).map_err(|e| CliError::io(&spec.outputs, e))?;
    let results = run_battery(&tasks, &spec.meta, spec.meta.seed);
    write_report(&spec.outputs.join(REPORT_FILE), &results)?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.informational && !r.passed)
        .map(|r| r.name.clone())
        .collect();
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(CliError::Verify(failed))
    }
}
