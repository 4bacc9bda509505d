//! LQR tasks and the exact, model-based quantities used as ground truth:
//! ergodic cost, policy gradient, Hessian action, the one-step-adaptation
//! meta-objective and its gradient, and the classical first-order updates.
//!
//! Sign convention throughout: the control is `u = -K x`.

use crate::error::{Error, MamlCondition, Result};
use crate::linalg::{
    self, ensure_finite, ensure_shape, ensure_square, is_positive_definite, min_symmetric_eigenvalue,
    solve_discrete_lyapunov, spectral_radius, Matrix, RiccatiSolution, SolverOptions,
};

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// One linear time-invariant system with quadratic stage cost.
#[derive(Debug, Clone)]
pub struct LqrTask {
    a: Matrix,
    b: Matrix,
    q: Matrix,
    r: Matrix,
    psi: Matrix,
    sigma0: Matrix,
    noise_factor: Matrix,
    init_factor: Matrix,
}

impl PartialEq for LqrTask {
    fn eq(&self, other: &Self) -> bool {
        self.a == other.a
            && self.b == other.b
            && self.q == other.q
            && self.r == other.r
            && self.psi == other.psi
            && self.sigma0 == other.sigma0
    }
}

fn check_symmetric(m: &Matrix, name: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    if linalg::asymmetry(m) > SYMMETRY_TOLERANCE * scale {
        return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
    }
    Ok(())
}

fn check_psd(m: &Matrix, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    let floor = -SYMMETRY_TOLERANCE * m.amax().max(1.0);
    if min_symmetric_eigenvalue(m) < floor {
        return Err(Error::InvalidArgument(format!(
            "{name} must be positive semidefinite"
        )));
    }
    Ok(())
}

fn check_pd(m: &Matrix, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    if !is_positive_definite(m) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be positive definite"
        )));
    }
    Ok(())
}

impl LqrTask {
    /// Validates dimensions, finiteness and definiteness: `Q`, `Sigma0` PSD;
    /// `R`, `Psi` PD.
    pub fn new(a: Matrix, b: Matrix, q: Matrix, r: Matrix, psi: Matrix, sigma0: Matrix) -> Result<Self> {
        let d = ensure_square(&a, "LqrTask (A)")?;
        let k = b.ncols();
        ensure_shape(&b, (d, k), "LqrTask (B)")?;
        ensure_shape(&q, (d, d), "LqrTask (Q)")?;
        ensure_shape(&r, (k, k), "LqrTask (R)")?;
        ensure_shape(&psi, (d, d), "LqrTask (Psi)")?;
        ensure_shape(&sigma0, (d, d), "LqrTask (Sigma0)")?;
        for (m, name) in [(&a, "A"), (&b, "B"), (&q, "Q"), (&r, "R"), (&psi, "Psi"), (&sigma0, "Sigma0")] {
            ensure_finite(m.as_slice(), name)?;
        }
        check_psd(&q, "Q")?;
        check_pd(&r, "R")?;
        check_pd(&psi, "Psi")?;
        check_psd(&sigma0, "Sigma0")?;
        let noise_factor = linalg::psd_factor(&psi)?;
        let init_factor = linalg::psd_factor(&sigma0)?;
        Ok(Self {
            a,
            b,
            q,
            r,
            psi,
            sigma0,
            noise_factor,
            init_factor,
        })
    }

    /// Scalar task (`d = k = 1`).
    pub fn scalar(a: f64, b: f64, q: f64, r: f64, psi: f64, sigma0: f64) -> Result<Self> {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        Self::new(s(a), s(b), s(q), s(r), s(psi), s(sigma0))
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn q(&self) -> &Matrix {
        &self.q
    }
    pub fn r(&self) -> &Matrix {
        &self.r
    }
    pub fn psi(&self) -> &Matrix {
        &self.psi
    }
    pub fn sigma0(&self) -> &Matrix {
        &self.sigma0
    }

    /// Lower factor `L` with `L L^T = Psi`.
    pub fn noise_factor(&self) -> &Matrix {
        &self.noise_factor
    }

    /// Factor `L` with `L L^T = Sigma0`.
    pub fn init_factor(&self) -> &Matrix {
        &self.init_factor
    }

    fn check_gain(&self, k: &PolicyGain) -> Result<()> {
        ensure_shape(
            k.matrix(),
            (self.control_dim(), self.state_dim()),
            "policy gain",
        )
    }

    /// `A - B K`
    pub fn closed_loop(&self, k: &PolicyGain) -> Result<Matrix> {
        self.check_gain(k)?;
        Ok(&self.a - &self.b * k.matrix())
    }

    /// `Q + K^T R K`
    pub fn stage_cost_matrix(&self, k: &PolicyGain) -> Result<Matrix> {
        self.check_gain(k)?;
        let km = k.matrix();
        Ok(&self.q + km.transpose() * &self.r * km)
    }

    /// Optimal value matrix and gain from the Riccati equation.
    pub fn optimal(&self) -> Result<RiccatiSolution> {
        linalg::solve_dare(&self.a, &self.b, &self.q, &self.r, &SolverOptions::default())
    }

    pub fn optimal_gain(&self) -> Result<PolicyGain> {
        PolicyGain::new(self.optimal()?.gain)
    }
}

/// Task collection with a prior over it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    tasks: Vec<LqrTask>,
    weights: Vec<f64>,
}

impl TaskSet {
    pub fn uniform(tasks: Vec<LqrTask>) -> Result<Self> {
        let n = tasks.len();
        Self::weighted(tasks, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn weighted(tasks: Vec<LqrTask>, weights: Vec<f64>) -> Result<Self> {
        let Some(first) = tasks.first() else {
            return Err(Error::InvalidArgument("task set is empty".into()));
        };
        if weights.len() != tasks.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} tasks",
                weights.len(),
                tasks.len()
            )));
        }
        let (d, k) = (first.state_dim(), first.control_dim());
        if let Some(i) = tasks
            .iter()
            .position(|t| t.state_dim() != d || t.control_dim() != k)
        {
            return Err(Error::InvalidArgument(format!(
                "task {i} has dimensions ({}, {}), expected ({d}, {k})",
                tasks[i].state_dim(),
                tasks[i].control_dim()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights must sum to 1, got {total}"
            )));
        }
        Ok(Self { tasks, weights })
    }

    pub fn tasks(&self) -> &[LqrTask] {
        &self.tasks
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.tasks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
    pub fn state_dim(&self) -> usize {
        self.tasks[0].state_dim()
    }
    pub fn control_dim(&self) -> usize {
        self.tasks[0].control_dim()
    }
    pub fn iter(&self) -> impl Iterator<Item = (&LqrTask, f64)> {
        self.tasks.iter().zip(self.weights.iter().copied())
    }
}

/// Feedback gain `K` (k x d); the decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGain(Matrix);

impl PolicyGain {
    pub fn new(k: Matrix) -> Result<Self> {
        ensure_finite(k.as_slice(), "policy gain")?;
        Ok(Self(k))
    }

    pub fn zeros(control_dim: usize, state_dim: usize) -> Self {
        Self(Matrix::zeros(control_dim, state_dim))
    }

    pub fn scalar(k: f64) -> Result<Self> {
        Self::new(Matrix::from_element(1, 1, k))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `K - step * direction`
    pub fn step(&self, direction: &Matrix, step: f64) -> Result<Self> {
        ensure_shape(direction, self.0.shape(), "policy step direction")?;
        Self::new(&self.0 - direction * step)
    }

    /// `K + delta`
    pub fn perturbed(&self, delta: &Matrix) -> Result<Self> {
        ensure_shape(delta, self.0.shape(), "policy perturbation")?;
        Self::new(&self.0 + delta)
    }
}

/// Exact evaluation of a stabilizing gain on one task.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    /// Value matrix `P_K`.
    pub p: Matrix,
    /// State Gramian `Sigma_K`.
    pub sigma: Matrix,
    /// `E_K = (R + B^T P B) K - B^T P A`
    pub e: Matrix,
    /// `J(K) = Tr(P Psi)`
    pub cost: f64,
    pub closed_loop: Matrix,
    /// `R + B^T P B`
    pub control_hessian: Matrix,
}

impl PolicyEvaluation {
    /// `2 E Sigma`
    pub fn gradient(&self) -> Matrix {
        &self.e * &self.sigma * 2.0
    }

    /// `Tr((Q + K^T R K) Sigma)`, the Gramian form of the cost.
    pub fn gramian_cost(&self, task: &LqrTask, k: &PolicyGain) -> Result<f64> {
        Ok(linalg::trace_of_product(&task.stage_cost_matrix(k)?, &self.sigma))
    }

    /// Hessian of the cost applied to a direction `X`, i.e. the directional
    /// derivative of `2 E Sigma`:
    /// `2 (R + B^T P B) X Sigma - 2 B^T P~ F Sigma + 2 E Sigma~` with `F = A - BK`,
    /// `P~ = F^T P~ F + X^T E + E^T X` and
    /// `Sigma~ = F Sigma~ F^T - B X Sigma F^T - F Sigma X^T B^T`.
    ///
    /// Its quadratic form `<X, H[X]>` equals
    /// `<X, 2 (R + B^T P B) X Sigma - 4 B^T P~ F Sigma>`.
    pub fn hessian_action(&self, task: &LqrTask, x: &Matrix) -> Result<Matrix> {
        ensure_shape(x, self.e.shape(), "Hessian direction")?;
        let opts = SolverOptions::default();
        let f = &self.closed_loop;
        let value_rhs = x.transpose() * &self.e + self.e.transpose() * x;
        let p_tilde = solve_discrete_lyapunov(&f.transpose(), &linalg::symmetrize(&value_rhs), &opts)?;
        let bx_sigma_ft = task.b() * x * &self.sigma * f.transpose();
        let gramian_rhs = -(&bx_sigma_ft + bx_sigma_ft.transpose());
        let sigma_tilde = solve_discrete_lyapunov(f, &linalg::symmetrize(&gramian_rhs), &opts)?;
        let first = &self.control_hessian * x * &self.sigma;
        let second = task.b().transpose() * p_tilde * f * &self.sigma;
        let third = &self.e * sigma_tilde;
        Ok((first - second + third) * 2.0)
    }
}

pub fn is_stable(task: &LqrTask, k: &PolicyGain) -> Result<bool> {
    Ok(spectral_radius(&task.closed_loop(k)?)? < 1.0)
}

fn stable_closed_loop(task: &LqrTask, k: &PolicyGain) -> Result<Matrix> {
    let closed = task.closed_loop(k)?;
    let radius = spectral_radius(&closed)?;
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }
    Ok(closed)
}

pub fn evaluate_policy(task: &LqrTask, k: &PolicyGain) -> Result<PolicyEvaluation> {
    let closed = stable_closed_loop(task, k)?;
    let opts = SolverOptions::default();
    let stage = task.stage_cost_matrix(k)?;
    let p = solve_discrete_lyapunov(&closed.transpose(), &stage, &opts)?;
    let sigma = solve_discrete_lyapunov(&closed, task.psi(), &opts)?;
    let bt_p = task.b().transpose() * &p;
    let control_hessian = task.r() + &bt_p * task.b();
    let e = &control_hessian * k.matrix() - &bt_p * task.a();
    let cost = linalg::trace_of_product(&p, task.psi());
    Ok(PolicyEvaluation {
        p,
        sigma,
        e,
        cost,
        closed_loop: closed,
        control_hessian,
    })
}

/// Ergodic cost `Tr(P_K Psi)` alone (one Lyapunov solve instead of two).
pub fn exact_cost(task: &LqrTask, k: &PolicyGain) -> Result<f64> {
    let closed = stable_closed_loop(task, k)?;
    let p = solve_discrete_lyapunov(&closed.transpose(), &task.stage_cost_matrix(k)?, &SolverOptions::default())?;
    Ok(linalg::trace_of_product(&p, task.psi()))
}

pub fn exact_gradient(task: &LqrTask, k: &PolicyGain) -> Result<Matrix> {
    Ok(evaluate_policy(task, k)?.gradient())
}

pub fn exact_hessian_action(task: &LqrTask, k: &PolicyGain, x: &Matrix) -> Result<Matrix> {
    evaluate_policy(task, k)?.hessian_action(task, x)
}

/// Everything about one task needed for the meta-objective at `K`.
struct AdaptedTask {
    at_k: PolicyEvaluation,
    adapted_gain: PolicyGain,
    at_adapted: PolicyEvaluation,
}

fn adapt(index: usize, task: &LqrTask, k: &PolicyGain, eta: f64) -> Result<AdaptedTask> {
    let at_k = evaluate_policy(task, k).map_err(|e| match e {
        Error::Unstable { radius } => Error::NotMamlStabilizing {
            task: index,
            condition: MamlCondition::Initial,
            radius,
        },
        other => other,
    })?;
    let adapted_gain = k.step(&at_k.gradient(), eta)?;
    let at_adapted = evaluate_policy(task, &adapted_gain).map_err(|e| match e {
        Error::Unstable { radius } => Error::NotMamlStabilizing {
            task: index,
            condition: MamlCondition::Adapted,
            radius,
        },
        other => other,
    })?;
    Ok(AdaptedTask {
        at_k,
        adapted_gain,
        at_adapted,
    })
}

fn check_rate(eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "adaptation rate must be nonnegative and finite, got {eta}"
        )));
    }
    Ok(())
}

/// `L(K) = sum_i p_i J_i(K - eta grad J_i(K))`
pub fn meta_objective(tasks: &TaskSet, k: &PolicyGain, eta: f64) -> Result<f64> {
    check_rate(eta)?;
    let mut total = 0.0;
    for (i, (task, w)) in tasks.iter().enumerate() {
        total += w * adapt(i, task, k, eta)?.at_adapted.cost;
    }
    Ok(total)
}

/// `grad L(K) = sum_i p_i (I - eta H_i(K)) grad J_i(K')` with
/// `K' = K - eta grad J_i(K)`; the Hessian operator is self-adjoint so the
/// product is applied as `g - eta H_i(K)[g]`.
pub fn exact_meta_gradient(tasks: &TaskSet, k: &PolicyGain, eta: f64) -> Result<Matrix> {
    check_rate(eta)?;
    let mut total = Matrix::zeros(k.matrix().nrows(), k.matrix().ncols());
    for (i, (task, w)) in tasks.iter().enumerate() {
        let adapted = adapt(i, task, k, eta)?;
        let g = adapted.at_adapted.gradient();
        let term = if eta == 0.0 {
            g
        } else {
            let hg = adapted.at_k.hessian_action(task, &g)?;
            &g - hg * eta
        };
        total += term * w;
    }
    Ok(total)
}

/// The adapted gain `K - eta grad J_i(K)` for each task.
pub fn adapted_gains(tasks: &TaskSet, k: &PolicyGain, eta: f64) -> Result<Vec<PolicyGain>> {
    check_rate(eta)?;
    tasks
        .tasks()
        .iter()
        .enumerate()
        .map(|(i, t)| adapt(i, t, k, eta).map(|a| a.adapted_gain))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    GradientDescent,
    NaturalGradient,
    GaussNewton,
}

pub fn policy_update(task: &LqrTask, k: &PolicyGain, step: f64, rule: UpdateRule) -> Result<PolicyGain> {
    if !(step.is_finite() && step >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be nonnegative, got {step}"
        )));
    }
    let eval = evaluate_policy(task, k)?;
    let grad = eval.gradient();
    let direction = match rule {
        UpdateRule::GradientDescent => grad,
        UpdateRule::NaturalGradient | UpdateRule::GaussNewton => {
            // grad * Sigma^{-1} = 2 E; solve instead of inverting.
            let sigma_chol = eval
                .sigma
                .clone()
                .cholesky()
                .ok_or(Error::Internal("state Gramian is not positive definite"))?;
            let natural = sigma_chol.solve(&grad.transpose()).transpose();
            if rule == UpdateRule::NaturalGradient {
                natural
            } else {
                linalg::solve_linear(&eval.control_hessian, &natural)?
            }
        }
    };
    k.step(&direction, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_task() -> LqrTask {
        LqrTask::scalar(0.9, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn stability_examples() {
        let t = |a: f64| LqrTask::scalar(a, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(is_stable(&t(0.5), &PolicyGain::scalar(0.0).unwrap()).unwrap());
        assert!(!is_stable(&t(1.5), &PolicyGain::scalar(0.0).unwrap()).unwrap());
        assert!(is_stable(&t(1.5), &PolicyGain::scalar(1.0).unwrap()).unwrap());
        assert!(is_stable(&t(0.5), &PolicyGain::zeros(1, 2)).is_err());
    }

    #[test]
    fn scalar_evaluation_matches_closed_forms() {
        // A - BK = 0.4, 1 - 0.16 = 0.84
        let e = evaluate_policy(&scalar_task(), &PolicyGain::scalar(0.5).unwrap()).unwrap();
        assert!(close(e.p[(0, 0)], 1.25 / 0.84, 1e-12));
        assert!(close(e.sigma[(0, 0)], 1.0 / 0.84, 1e-12));
        assert!(close(e.e[(0, 0)], -0.095238095238, 1e-9));
        assert!(close(e.cost, 1.488095238095, 1e-9));
        assert!(close(e.gradient()[(0, 0)], -0.226757369615, 1e-9));
    }

    #[test]
    fn scalar_hessian_action() {
        let k = PolicyGain::scalar(0.5).unwrap();
        let one = Matrix::from_element(1, 1, 1.0);
        let h = exact_hessian_action(&scalar_task(), &k, &one).unwrap();
        assert!(close(h[(0, 0)], 6.355955, 1e-5), "{}", h[(0, 0)]);
        let zero = exact_hessian_action(&scalar_task(), &k, &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(zero[(0, 0)], 0.0);
    }

    #[test]
    fn hessian_quadratic_form_matches_short_expression() {
        let m = |r, c, v: &[f64]| linalg::matrix_from_row_major(r, c, v).unwrap();
        let task = LqrTask::new(
            m(2, 2, &[0.7, 0.3, -0.2, 0.5]),
            m(2, 2, &[1.0, 0.2, 0.4, 0.8]),
            m(2, 2, &[1.0, 0.1, 0.1, 2.0]),
            m(2, 2, &[1.5, -0.3, -0.3, 0.7]),
            m(2, 2, &[0.6, 0.1, 0.1, 0.9]),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let k = PolicyGain::new(m(2, 2, &[0.2, -0.1, 0.3, 0.4])).unwrap();
        let x = m(2, 2, &[0.5, -1.0, 0.7, 0.2]);
        let y = m(2, 2, &[-0.3, 0.9, 0.1, 1.1]);
        let eval = evaluate_policy(&task, &k).unwrap();
        let hx = eval.hessian_action(&task, &x).unwrap();
        let hy = eval.hessian_action(&task, &y).unwrap();

        let rhs = x.transpose() * &eval.e + eval.e.transpose() * &x;
        let p_tilde = solve_discrete_lyapunov(&eval.closed_loop.transpose(), &rhs, &SolverOptions::default()).unwrap();
        let short = &eval.control_hessian * &x * &eval.sigma * 2.0
            - task.b().transpose() * p_tilde * &eval.closed_loop * &eval.sigma * 4.0;
        assert!(close(hx.dot(&x), short.dot(&x), 1e-10));
        // the short expression is not the action itself off the scalar case
        assert!((&hx - &short).norm() > 1e-3);
        assert!(close(hx.dot(&y), x.dot(&hy), 1e-10));
    }

    #[test]
    fn zero_dynamics_evaluation() {
        let q = linalg::matrix_from_row_major(2, 2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let psi = linalg::matrix_from_row_major(2, 2, &[1.0, 0.2, 0.2, 0.5]).unwrap();
        let task = LqrTask::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2, 1),
            q.clone(),
            Matrix::identity(1, 1),
            psi.clone(),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let e = evaluate_policy(&task, &PolicyGain::zeros(1, 2)).unwrap();
        assert!((&e.p - &q).norm() < 1e-14);
        assert!((&e.sigma - &psi).norm() < 1e-14);
        assert!(close(e.cost, linalg::trace_of_product(&q, &psi), 1e-14));
    }

    #[test]
    fn optimum_is_stationary() {
        let task = scalar_task();
        let k_star = task.optimal_gain().unwrap();
        let e = evaluate_policy(&task, &k_star).unwrap();
        assert!(e.e.norm() < 1e-8);
        assert!(e.gradient().norm() < 1e-8);
    }

    #[test]
    fn unstable_gain_is_an_error() {
        let err = evaluate_policy(&scalar_task(), &PolicyGain::scalar(-0.2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
        assert!(exact_gradient(&scalar_task(), &PolicyGain::scalar(2.0).unwrap()).is_err());
    }

    #[test]
    fn meta_quantities_reduce_at_zero_rate() {
        let tasks = TaskSet::uniform(vec![
            scalar_task(),
            LqrTask::scalar(0.5, 1.0, 2.0, 1.0, 1.0, 1.0).unwrap(),
        ])
        .unwrap();
        let k = PolicyGain::scalar(0.3).unwrap();
        let avg_grad: Matrix = tasks
            .iter()
            .map(|(t, w)| exact_gradient(t, &k).unwrap() * w)
            .sum();
        let meta = exact_meta_gradient(&tasks, &k, 0.0).unwrap();
        assert!((meta - avg_grad).norm() < 1e-14);

        let avg_cost: f64 = tasks
            .iter()
            .map(|(t, w)| evaluate_policy(t, &k).unwrap().cost * w)
            .sum();
        assert!(close(meta_objective(&tasks, &k, 0.0).unwrap(), avg_cost, 1e-14));
    }

    #[test]
    fn meta_objective_composes_adaptation() {
        let tasks = TaskSet::uniform(vec![scalar_task()]).unwrap();
        let k = PolicyGain::scalar(0.5).unwrap();
        let expected = exact_cost(&scalar_task(), &PolicyGain::scalar(0.5 + 0.01 * 0.226757369615).unwrap()).unwrap();
        assert!(close(meta_objective(&tasks, &k, 0.01).unwrap(), expected, 1e-10));
        // a small adaptation step along -grad lowers the cost
        assert!(meta_objective(&tasks, &k, 1e-4).unwrap() < meta_objective(&tasks, &k, 0.0).unwrap());
    }

    #[test]
    fn meta_gradient_names_offending_task() {
        let tasks = TaskSet::uniform(vec![
            scalar_task(),
            LqrTask::scalar(1.5, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap(),
        ])
        .unwrap();
        let err = exact_meta_gradient(&tasks, &PolicyGain::scalar(0.1).unwrap(), 0.01).unwrap_err();
        assert!(matches!(
            err,
            Error::NotMamlStabilizing {
                task: 1,
                condition: MamlCondition::Initial,
                ..
            }
        ));
        // stable at K but the adapted gain overshoots
        let tasks = TaskSet::uniform(vec![scalar_task()]).unwrap();
        let err = exact_meta_gradient(&tasks, &PolicyGain::scalar(1.85).unwrap(), 10.0).unwrap_err();
        assert!(matches!(
            err,
            Error::NotMamlStabilizing {
                task: 0,
                condition: MamlCondition::Adapted,
                ..
            }
        ));
    }

    #[test]
    fn update_rules() {
        let task = scalar_task();
        let k = PolicyGain::scalar(0.5).unwrap();
        let gd = policy_update(&task, &k, 0.1, UpdateRule::GradientDescent).unwrap();
        assert!(close(gd.matrix()[(0, 0)], 0.522675737, 1e-8));
        let same = policy_update(&task, &k, 0.0, UpdateRule::GradientDescent).unwrap();
        assert_eq!(same, k);

        let k_star = task.optimal_gain().unwrap();
        let fixed = policy_update(&task, &k_star, 1.0, UpdateRule::GaussNewton).unwrap();
        assert!((fixed.matrix() - k_star.matrix()).norm() < 1e-8);

        // step 1/2 is exactly one policy-iteration step K - (R + B'PB)^{-1} E
        let gn = policy_update(&task, &k, 0.5, UpdateRule::GaussNewton).unwrap();
        let before = evaluate_policy(&task, &k).unwrap();
        let after = evaluate_policy(&task, &gn).unwrap();
        assert!(close(gn.matrix()[(0, 0)], 0.5 - before.e[(0, 0)] / before.control_hessian[(0, 0)], 1e-12));
        assert!(after.e.norm() < before.e.norm());

        let ngd = policy_update(&task, &k, 0.1, UpdateRule::NaturalGradient).unwrap();
        // grad * Sigma^{-1} = 2E
        assert!(close(ngd.matrix()[(0, 0)], 0.5 - 0.1 * 2.0 * before.e[(0, 0)], 1e-12));
    }

    #[test]
    fn task_validation() {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        assert!(LqrTask::new(s(0.5), s(1.0), s(1.0), s(0.0), s(1.0), s(1.0)).is_err());
        assert!(LqrTask::new(s(0.5), s(1.0), s(-1.0), s(1.0), s(1.0), s(1.0)).is_err());
        assert!(LqrTask::new(s(0.5), s(1.0), s(1.0), s(1.0), s(0.0), s(1.0)).is_err());
        assert!(LqrTask::new(s(0.5), s(1.0), s(1.0), s(1.0), s(1.0), s(0.0)).is_ok());
        let asym = linalg::matrix_from_row_major(2, 2, &[1.0, 0.1, 0.0, 1.0]).unwrap();
        assert!(LqrTask::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 1),
            asym,
            s(1.0),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2)
        )
        .is_err());
    }

    #[test]
    fn task_set_validation() {
        assert!(TaskSet::uniform(vec![]).is_err());
        assert!(TaskSet::weighted(vec![scalar_task()], vec![0.5]).is_err());
        assert!(TaskSet::weighted(vec![scalar_task(), scalar_task()], vec![1.5, -0.5]).is_err());
        let two_d = LqrTask::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 1),
            Matrix::identity(2, 2),
            Matrix::identity(1, 1),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
        )
        .unwrap();
        assert!(TaskSet::uniform(vec![scalar_task(), two_d]).is_err());
        let ts = TaskSet::weighted(vec![scalar_task(), scalar_task()], vec![0.25, 0.75]).unwrap();
        assert_eq!(ts.len(), 2);
    }
}
