//! Computable stability and sample-complexity diagnostics.

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::lqr::{evaluate_policy, exact_cost, exact_gradient, is_stable, LqrTask, PolicyGain, TaskSet};

/// Per task: `rho(A - BK) < 1` and `rho(A - B(K - eta grad J(K))) < 1`.
pub fn check_maml_stabilizing(tasks: &TaskSet, k: &PolicyGain, eta: f64) -> Vec<bool> {
    tasks
        .tasks()
        .iter()
        .map(|task| {
            if !is_stable(task, k).unwrap_or(false) {
                return false;
            }
            exact_gradient(task, k)
                .and_then(|g| k.step(&g, eta))
                .and_then(|adapted| is_stable(task, &adapted))
                .unwrap_or(false)
        })
        .collect()
}

/// Constants of `J(K) - J(K*) <= (1/lambda) ||grad J(K)||_F^2`, for two
/// choices of the covariance floor `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDomination {
    /// `mu = sigma_min(Sigma0)`.
    pub lambda_initial: f64,
    /// `mu = sigma_min(Psi)`; `Sigma_K >= Psi` for every stable `K`.
    pub lambda_noise: f64,
    /// `||Sigma_{K*}||`.
    pub optimal_gramian_norm: f64,
}

impl GradientDomination {
    /// `(gap, bound)` at `K` for the given constant.
    pub fn sides(task: &LqrTask, k: &PolicyGain, lambda: f64) -> Result<(f64, f64)> {
        let eval = evaluate_policy(task, k)?;
        let opt = exact_cost(task, &task.optimal_gain()?)?;
        let g = eval.gradient();
        Ok((eval.cost - opt, g.norm_squared() / lambda))
    }
}

/// `lambda = mu^2 sigma_min(R) / ||Sigma_{K*}||`.
pub fn gradient_domination_constant(task: &LqrTask) -> Result<GradientDomination> {
    let k_opt = task.optimal_gain()?;
    let sigma_norm = spectral_norm(&evaluate_policy(task, &k_opt)?.sigma);
    let r_min = linalg::sigma_min(task.r());
    let lambda = |mu: f64| mu * mu * r_min / sigma_norm;
    Ok(GradientDomination {
        lambda_initial: lambda(linalg::sigma_min(task.sigma0())),
        lambda_noise: lambda(linalg::sigma_min(task.psi())),
        optimal_gramian_norm: sigma_norm,
    })
}

struct SetNorms {
    q_min: f64,
    mu: f64,
    b_max: f64,
    q_max: f64,
    r_max: f64,
    closed_max: f64,
    cost_max: f64,
}

fn set_norms(tasks: &TaskSet, k: &PolicyGain) -> Result<SetNorms> {
    let mut n = SetNorms {
        q_min: f64::INFINITY,
        mu: f64::INFINITY,
        b_max: 0.0,
        q_max: 0.0,
        r_max: 0.0,
        closed_max: 0.0,
        cost_max: 0.0,
    };
    for task in tasks.tasks() {
        n.q_min = n.q_min.min(linalg::sigma_min(task.q()));
        n.mu = n.mu.min(linalg::sigma_min(task.sigma0()));
        n.b_max = n.b_max.max(spectral_norm(task.b()));
        n.q_max = n.q_max.max(spectral_norm(task.q()));
        n.r_max = n.r_max.max(spectral_norm(task.r()));
        n.closed_max = n.closed_max.max(spectral_norm(&task.closed_loop(k)?));
        n.cost_max = n.cost_max.max(exact_cost(task, k)?);
    }
    Ok(n)
}

/// `h = sigma_min(Q) mu / (4 ||B|| J_max(K) (||A - BK|| + 1))`, with norms
/// maximized and `sigma_min(Q)`, `mu = sigma_min(Sigma0)` minimized over tasks.
pub fn trust_radius(tasks: &TaskSet, k: &PolicyGain) -> Result<f64> {
    let n = set_norms(tasks, k)?;
    Ok(n.q_min * n.mu / (4.0 * n.b_max * n.cost_max * (n.closed_max + 1.0)))
}

/// Smallest `m` with `m >= (2 s / eps^2)(sigma^2 + B eps / (3 sqrt(s))) ln((d1 + d2) / delta)`,
/// `s = min(d1, d2)`.
pub fn bernstein_sample_size(
    dim1: usize,
    dim2: usize,
    variance_proxy: f64,
    range_proxy: f64,
    epsilon: f64,
    delta: f64,
) -> Result<u64> {
    if dim1 == 0 || dim2 == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    if !(variance_proxy > 0.0 && range_proxy > 0.0 && variance_proxy.is_finite() && range_proxy.is_finite()) {
        return Err(Error::InvalidArgument("proxies must be positive and finite".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("epsilon and delta must lie in (0, 1)".into()));
    }
    let s = dim1.min(dim2) as f64;
    let bound = (2.0 * s / (epsilon * epsilon))
        * (variance_proxy + range_proxy * epsilon / (3.0 * s.sqrt()))
        * ((dim1 + dim2) as f64 / delta).ln();
    Ok(bound.ceil() as u64)
}

/// Smallest `l` with
/// `l >= d J_max(K)^2 (||Q|| + ||R|| ||K||^2) / (eps mu sigma_min(Q)^2)`.
pub fn rollout_length_bound(tasks: &TaskSet, k: &PolicyGain, epsilon: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = set_norms(tasks, k)?;
    if n.mu <= 0.0 || n.q_min <= 0.0 {
        return Err(Error::InvalidArgument(
            "rollout length bound needs Sigma0 and Q positive definite".into(),
        ));
    }
    let k_norm = spectral_norm(k.matrix());
    let d = tasks.state_dim() as f64;
    let bound = d * n.cost_max * n.cost_max * (n.q_max + n.r_max * k_norm * k_norm)
        / (epsilon * n.mu * n.q_min * n.q_min);
    Ok(bound.ceil() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDiagnostics {
    pub stable: bool,
    pub maml_stabilizing: bool,
    /// `gamma (J(K0) - J*) - (J(K) - J*)`; nonnegative inside the sub-level set.
    pub sublevel_margin: f64,
    pub domination: GradientDomination,
    /// The domination inequality at `K` with `lambda_noise`.
    pub graddom_satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub tasks: Vec<TaskDiagnostics>,
    /// `None` when `K` destabilizes some task.
    pub trust_radius: Option<f64>,
}

/// Diagnostics at `K` relative to the starting gain `K0` and sub-level scale `gamma`.
pub fn diagnose(tasks: &TaskSet, k: &PolicyGain, k0: &PolicyGain, eta: f64, gamma: f64) -> Result<DiagnosticsReport> {
    let maml = check_maml_stabilizing(tasks, k, eta);
    let per_task = tasks
        .tasks()
        .iter()
        .zip(maml)
        .map(|(task, maml_stabilizing)| {
            let stable = is_stable(task, k)?;
            let j_opt = exact_cost(task, &task.optimal_gain()?)?;
            let initial_gap = exact_cost(task, k0)? - j_opt;
            let gap = if stable { exact_cost(task, k)? - j_opt } else { f64::INFINITY };
            let domination = gradient_domination_constant(task)?;
            let graddom_satisfied = stable && {
                let (lhs, rhs) = GradientDomination::sides(task, k, domination.lambda_noise)?;
                lhs <= rhs
            };
            Ok(TaskDiagnostics {
                stable,
                maml_stabilizing,
                sublevel_margin: gamma * initial_gap - gap,
                domination,
                graddom_satisfied,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let trust_radius = if per_task.iter().all(|t| t.stable) {
        Some(trust_radius(tasks, k)?)
    } else {
        None
    };
    Ok(DiagnosticsReport {
        tasks: per_task,
        trust_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set() -> TaskSet {
        TaskSet::uniform(vec![LqrTask::scalar(0.9, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()]).unwrap()
    }

    #[test]
    fn optimal_gain_is_maml_stabilizing() {
        let set = scalar_set();
        let k = set.tasks()[0].optimal_gain().unwrap();
        assert_eq!(check_maml_stabilizing(&set, &k, 0.1), vec![true]);
    }

    #[test]
    fn incompatible_pair_has_no_joint_stabilizer() {
        let set = TaskSet::uniform(vec![
            LqrTask::scalar(3.0, 4.0, 1.0, 1.0, 1.0, 1.0).unwrap(),
            LqrTask::scalar(1.0, -1.0, 1.0, 1.0, 1.0, 1.0).unwrap(),
        ])
        .unwrap();
        for i in -3000..=3000 {
            let k = PolicyGain::scalar(i as f64 * 1e-3).unwrap();
            assert!(check_maml_stabilizing(&set, &k, 0.0).contains(&false), "K = {}", i as f64 * 1e-3);
        }
    }

    #[test]
    fn scalar_domination_constant() {
        let dom = gradient_domination_constant(&scalar_set().tasks()[0]).unwrap();
        // scalar Riccati equation reduces to P^2 - 0.81 P - 1 = 0
        let p = (0.81 + (0.81f64 * 0.81 + 4.0).sqrt()) / 2.0;
        let k_opt = 0.9 * p / (1.0 + p);
        let closed = 0.9 - k_opt;
        let expected = 1.0 - closed * closed;
        assert!((dom.lambda_initial - expected).abs() < 1e-9, "{} vs {expected}", dom.lambda_initial);
        assert_eq!(dom.lambda_initial, dom.lambda_noise);
    }

    #[test]
    fn doubling_initial_floor_quadruples_lambda() {
        let a = LqrTask::scalar(0.9, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let b = LqrTask::scalar(0.9, 1.0, 1.0, 1.0, 1.0, 2.0).unwrap();
        let la = gradient_domination_constant(&a).unwrap().lambda_initial;
        let lb = gradient_domination_constant(&b).unwrap().lambda_initial;
        assert!((lb / la - 4.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_trust_radius() {
        let h = trust_radius(&scalar_set(), &PolicyGain::scalar(0.5).unwrap()).unwrap();
        let j = 1.0 / 0.84 + 0.25 / 0.84;
        assert!((h - 1.0 / (4.0 * j * 1.4)).abs() < 1e-12);
        assert!((h - 0.12).abs() < 1e-5);
    }

    #[test]
    fn bernstein_example() {
        assert_eq!(bernstein_sample_size(1, 1, 1.0, 1.0, 0.5, 0.1).unwrap(), 28);
        assert!(bernstein_sample_size(1, 1, 1.0, 1.0, 0.25, 0.1).unwrap() >= 28);
        assert!(bernstein_sample_size(1, 1, 1.0, 1.0, 0.5, 0.05).unwrap() >= 28);
        assert!(bernstein_sample_size(1, 1, 1.0, 1.0, 1.5, 0.1).is_err());
    }

    #[test]
    fn scalar_rollout_bound() {
        let k = PolicyGain::scalar(0.5).unwrap();
        assert_eq!(rollout_length_bound(&scalar_set(), &k, 0.1).unwrap(), 28);
        assert_eq!(rollout_length_bound(&scalar_set(), &k, 1.0).unwrap(), 3);
    }

    #[test]
    fn report_at_start_sits_on_sublevel_boundary() {
        let set = scalar_set();
        let k = PolicyGain::scalar(0.5).unwrap();
        let report = diagnose(&set, &k, &k, 1e-3, 1.0).unwrap();
        assert_eq!(report.tasks[0].sublevel_margin, 0.0);
        assert!(report.tasks[0].maml_stabilizing && report.tasks[0].graddom_satisfied);
        assert!(report.trust_radius.unwrap() > 0.0);
    }
}
