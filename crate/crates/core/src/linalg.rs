//! Dense small-matrix primitives and the two structured solvers (discrete
//! Lyapunov and discrete algebraic Riccati) that the rest of the crate is
//! built on.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Domain types validate finiteness
//! at their own boundaries; [`matrix_from_row_major`] is the validating
//! constructor used when matrices come from the outside world.

use nalgebra::{DMatrix, Schur};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Above this state dimension the Kronecker system gets too large and the
/// Lyapunov solver switches to fixed-point iteration.
pub const KRONECKER_MAX_DIM: usize = 32;

const SCHUR_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Frobenius-norm stopping threshold on the equation residual, scaled by
    /// `max(1, ||X||_F)` of the returned solution.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100_000,
        }
    }
}

impl SolverOptions {
    pub fn new(tolerance: f64, max_iterations: usize) -> Result<Self> {
        if !(tolerance.is_finite() && tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "solver tolerance must be positive, got {tolerance}"
            )));
        }
        if max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "solver max_iterations must be at least 1".into(),
            ));
        }
        Ok(Self {
            tolerance,
            max_iterations,
        })
    }

    fn accepts(&self, residual: f64, solution: &Matrix) -> bool {
        residual <= self.tolerance * solution.norm().max(1.0)
    }
}

/// Builds a matrix from row-major entries, rejecting wrong lengths and
/// non-finite values.
pub fn matrix_from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    if entries.len() != rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{rows}x{cols} matrix needs {} entries, got {}",
            rows * cols,
            entries.len()
        )));
    }
    ensure_finite(entries, "matrix entries")?;
    Ok(Matrix::from_row_slice(rows, cols, entries))
}

/// Row-major copy of the entries.
pub fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub(crate) fn ensure_finite(entries: &[f64], what: &str) -> Result<()> {
    match entries.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "{what} must be finite (entry {i} is {})",
            entries[i]
        ))),
        None => Ok(()),
    }
}

pub(crate) fn ensure_square(m: &Matrix, context: &'static str) -> Result<usize> {
    if m.is_square() {
        Ok(m.nrows())
    } else {
        Err(Error::Dimension {
            context,
            expected: (m.nrows(), m.nrows()),
            got: m.shape(),
        })
    }
}

pub(crate) fn ensure_shape(m: &Matrix, shape: (usize, usize), context: &'static str) -> Result<()> {
    if m.shape() == shape {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected: shape,
            got: m.shape(),
        })
    }
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.norm()
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    let n = ensure_square(m, "spectral_radius")?;
    match n {
        1 => Ok(m[(0, 0)].abs()),
        2 => Ok(spectral_radius_2x2(m)),
        _ => {
            let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITERATIONS).ok_or(
                Error::NoConvergence {
                    solver: "Schur eigenvalue iteration",
                    iterations: SCHUR_MAX_ITERATIONS,
                    residual: f64::NAN,
                },
            )?;
            Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max))
        }
    }
}

fn spectral_radius_2x2(m: &Matrix) -> f64 {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let half_trace = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = half_trace * half_trace - det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        // Avoid cancellation for the smaller root; only the larger modulus matters.
        let big = if half_trace >= 0.0 {
            half_trace + root
        } else {
            half_trace - root
        };
        let small = if big != 0.0 { det / big } else { 0.0 };
        big.abs().max(small.abs())
    } else {
        // complex pair: |lambda|^2 = det
        det.sqrt()
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// Smallest singular value. For symmetric PSD input this is the smallest eigenvalue.
pub fn sigma_min(m: &Matrix) -> f64 {
    if m.len() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().min()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &Matrix) -> f64 {
    if m.len() == 1 {
        return m[(0, 0)];
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Maximum absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

/// Trace of `a * b` without forming the product.
pub fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Square root factor `L` with `L L^T = m` for a symmetric PSD matrix.
///
/// Uses Cholesky when `m` is positive definite and an eigen-decomposition
/// otherwise, so singular covariances are allowed.
pub fn psd_factor(m: &Matrix) -> Result<Matrix> {
    ensure_square(m, "psd_factor")?;
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = symmetrize(m).symmetric_eigen();
    let floor = -1e-12 * eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(Error::InvalidArgument(
            "covariance matrix is not positive semidefinite".into(),
        ));
    }
    let mut factor = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

pub fn is_positive_definite(m: &Matrix) -> bool {
    m.is_square() && m.clone().cholesky().is_some()
}

/// `||X - W - F X F^T||_F`
pub fn lyapunov_residual(f: &Matrix, w: &Matrix, x: &Matrix) -> f64 {
    (x - w - f * x * f.transpose()).norm()
}

/// Solves `X = W + F X F^T` for `X`.
///
/// Requires `rho(F) < 1`. The result is symmetrized before it is returned, so
/// `W` should be symmetric; it does not need to be PSD (the Hessian action
/// solves this equation with an indefinite right-hand side).
pub fn solve_discrete_lyapunov(f: &Matrix, w: &Matrix, opts: &SolverOptions) -> Result<Matrix> {
    let n = ensure_square(f, "solve_discrete_lyapunov (F)")?;
    ensure_shape(w, (n, n), "solve_discrete_lyapunov (W)")?;
    let radius = spectral_radius(f)?;
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }
    if n <= KRONECKER_MAX_DIM {
        lyapunov_kronecker(f, w, opts)
    } else {
        lyapunov_fixed_point(f, w, Matrix::zeros(n, n), opts)
    }
}

fn lyapunov_kronecker(f: &Matrix, w: &Matrix, opts: &SolverOptions) -> Result<Matrix> {
    let n = f.nrows();
    if n == 1 {
        let x = w[(0, 0)] / (1.0 - f[(0, 0)] * f[(0, 0)]);
        return Ok(Matrix::from_element(1, 1, x));
    }
    // Column-major vec: vec(F X F^T) = (F kron F) vec(X).
    let mut system = -f.kronecker(f);
    for i in 0..n * n {
        system[(i, i)] += 1.0;
    }
    let lu = system.lu();
    let rhs = nalgebra::DVector::from_column_slice(w.as_slice());
    let vec_x = lu
        .solve(&rhs)
        .ok_or(Error::Internal("singular Kronecker system in Lyapunov solve"))?;
    let mut x = symmetrize(&Matrix::from_column_slice(n, n, vec_x.as_slice()));

    // A couple of refinement sweeps recover digits lost to conditioning.
    for _ in 0..3 {
        let resid_mat = w + f * &x * f.transpose() - &x;
        if opts.accepts(resid_mat.norm(), &x) {
            return Ok(x);
        }
        let r = nalgebra::DVector::from_column_slice(resid_mat.as_slice());
        let Some(dx) = lu.solve(&r) else { break };
        x += symmetrize(&Matrix::from_column_slice(n, n, dx.as_slice()));
    }
    let residual = lyapunov_residual(f, w, &x);
    if opts.accepts(residual, &x) {
        Ok(x)
    } else {
        lyapunov_fixed_point(f, w, x, opts)
    }
}

fn lyapunov_fixed_point(f: &Matrix, w: &Matrix, start: Matrix, opts: &SolverOptions) -> Result<Matrix> {
    let ft = f.transpose();
    let mut x = start;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let next = symmetrize(&(w + f * &x * &ft));
        residual = (&next - &x).norm();
        x = next;
        if opts.accepts(residual, &x) {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        solver: "discrete Lyapunov fixed-point iteration",
        iterations: opts.max_iterations,
        residual,
    })
}

/// Solution of the discrete algebraic Riccati equation together with the
/// optimal feedback gain `K* = (R + B^T P B)^{-1} B^T P A`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: Matrix,
    pub gain: Matrix,
    pub iterations: usize,
    pub residual: f64,
}

/// `||P - Q - A^T P A + A^T P B (R + B^T P B)^{-1} B^T P A||_F`
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Some((next, _)) => (next - p).norm(),
        None => f64::INFINITY,
    }
}

/// One application of the Riccati map, returning the new `P` and the gain
/// computed from the old one.
fn riccati_map(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Option<(Matrix, Matrix)> {
    let bt_p = b.transpose() * p;
    let gram = r + &bt_p * b;
    let gain = gram.cholesky()?.solve(&(&bt_p * a));
    let at_p_a = a.transpose() * p * a;
    let correction = a.transpose() * bt_p.transpose() * &gain;
    Some((symmetrize(&(q + at_p_a - correction)), gain))
}

/// Solves the DARE by value iteration from `P_0 = Q`, finishing with a few
/// policy-iteration (Hewer) steps to polish the fixed point.
pub fn solve_dare(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    opts: &SolverOptions,
) -> Result<RiccatiSolution> {
    let d = ensure_square(a, "solve_dare (A)")?;
    let k = b.ncols();
    ensure_shape(b, (d, k), "solve_dare (B)")?;
    ensure_shape(q, (d, d), "solve_dare (Q)")?;
    ensure_shape(r, (k, k), "solve_dare (R)")?;
    if !is_positive_definite(r) {
        return Err(Error::InvalidArgument(
            "R must be symmetric positive definite".into(),
        ));
    }

    let mut p = symmetrize(q);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let (next, _) = riccati_map(a, b, q, r, &p)
            .ok_or(Error::Internal("R + B^T P B lost positive definiteness"))?;
        residual = (&next - &p).norm();
        p = next;
        iterations += 1;
        if !residual.is_finite() {
            break;
        }
        if opts.accepts(residual, &p) {
            break;
        }
    }
    if !opts.accepts(residual, &p) {
        return Err(Error::NoConvergence {
            solver: "Riccati value iteration",
            iterations,
            residual,
        });
    }

    let gain_of = |p: &Matrix| -> Result<Matrix> {
        let bt_p = b.transpose() * p;
        (r + &bt_p * b)
            .cholesky()
            .map(|c| c.solve(&(&bt_p * a)))
            .ok_or(Error::Internal("R + B^T P B lost positive definiteness"))
    };

    let mut gain = gain_of(&p)?;
    let radius = spectral_radius(&(a - b * &gain))?;
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }

    // Hewer steps: evaluate the current gain exactly, then re-derive the gain.
    let polish = SolverOptions {
        tolerance: opts.tolerance * 1e-3,
        ..*opts
    };
    for _ in 0..3 {
        let closed = a - b * &gain;
        let stage = q + gain.transpose() * r * &gain;
        let Ok(p_next) = solve_discrete_lyapunov(&closed.transpose(), &stage, &polish)
            .or_else(|_| solve_discrete_lyapunov(&closed.transpose(), &stage, opts))
        else {
            break;
        };
        let next_residual = dare_residual(a, b, q, r, &p_next);
        if next_residual >= residual {
            break;
        }
        let Ok(next_gain) = gain_of(&p_next) else { break };
        if spectral_radius(&(a - b * &next_gain))? >= 1.0 {
            break;
        }
        p = p_next;
        gain = next_gain;
        residual = next_residual;
    }

    Ok(RiccatiSolution {
        p,
        gain,
        iterations,
        residual,
    })
}

/// Solves `m * X = rhs` for square `m`.
pub fn solve_linear(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::Internal("singular linear system"))
}
