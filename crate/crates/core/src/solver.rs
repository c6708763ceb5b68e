//! Iterative solvers: conjugate gradients in a configurable inner
//! product, symmetric Gauss-Seidel, and power iteration for operator
//! norms.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
#[cfg(not(test))]
use crate::float::FloatExt;
use crate::float::SplitMix64;
use crate::operator::LinearOperator;
use crate::sparse::SparseMatrix;

/// Outcome of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct CgResult {
    /// Final iterate.
    pub solution: Vec<f64>,
    /// Iterations performed.
    pub iterations: usize,
    /// Relative residual (in the solve's inner-product norm) at exit.
    pub final_rel_residual: f64,
    /// Relative residual after each iteration.
    pub residual_history: Vec<f64>,
    /// Set when a nonpositive curvature `p . Ap <= 0` or a nonpositive
    /// preconditioned product is met — the signature of an indefinite
    /// operator or preconditioner. The iterate returned is the last one
    /// before the breakdown.
    pub breakdown: bool,
    /// True when the tolerance was reached.
    pub converged: bool,
}

fn weighted_dot(m: Option<&SparseMatrix>, x: &[f64], y: &[f64]) -> f64 {
    match m {
        Some(m) => {
            let my = m.spmv(y);
            x.iter().zip(&my).map(|(a, b)| a * b).sum()
        }
        None => x.iter().zip(y).map(|(a, b)| a * b).sum(),
    }
}

/// Preconditioned conjugate gradients on `op x = b`.
///
/// All inner products are taken in the `m_inner`-weighted form
/// `(x, y) = x^T M y` (`None` means Euclidean), so an operator that is
/// self-adjoint with respect to `M` is treated symmetrically even when its
/// matrix representation is not symmetric. The preconditioner, when
/// given, must be self-adjoint positive definite with respect to the same
/// inner product. Convergence is judged on the relative residual in the
/// `M`-norm; indefiniteness is reported through the breakdown flag, never
/// silently ignored.
pub fn cg(
    op: &dyn LinearOperator,
    b: &[f64],
    m_inner: Option<&SparseMatrix>,
    precond: Option<&dyn LinearOperator>,
    tol: f64,
    maxit: usize,
) -> CgResult {
    assert_eq!(op.nrows(), op.ncols(), "cg needs a square operator");
    assert_eq!(b.len(), op.ncols(), "cg right-hand side dimension mismatch");
    let n = b.len();

    let b_norm = weighted_dot(m_inner, b, b).sqrt();
    if b_norm == 0.0 {
        return CgResult {
            solution: vec![0.0; n],
            iterations: 0,
            final_rel_residual: 0.0,
            residual_history: Vec::new(),
            breakdown: false,
            converged: true,
        };
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = match precond {
        Some(p) => p.apply(&r),
        None => r.clone(),
    };
    let mut rz = weighted_dot(m_inner, &r, &z);
    let mut history = Vec::new();
    if rz <= 0.0 {
        return CgResult {
            solution: x,
            iterations: 0,
            final_rel_residual: 1.0,
            residual_history: history,
            breakdown: true,
            converged: false,
        };
    }
    let mut p = z.clone();

    for k in 1..=maxit {
        let q = op.apply(&p);
        let pq = weighted_dot(m_inner, &p, &q);
        if pq <= 0.0 {
            return CgResult {
                solution: x,
                iterations: k - 1,
                final_rel_residual: history.last().copied().unwrap_or(1.0),
                residual_history: history,
                breakdown: true,
                converged: false,
            };
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        let res = weighted_dot(m_inner, &r, &r).sqrt() / b_norm;
        history.push(res);
        if res <= tol {
            return CgResult {
                solution: x,
                iterations: k,
                final_rel_residual: res,
                residual_history: history,
                breakdown: false,
                converged: true,
            };
        }
        z = match precond {
            Some(pc) => pc.apply(&r),
            None => r.clone(),
        };
        let rz_new = weighted_dot(m_inner, &r, &z);
        if rz_new <= 0.0 {
            return CgResult {
                solution: x,
                iterations: k,
                final_rel_residual: res,
                residual_history: history,
                breakdown: true,
                converged: false,
            };
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    CgResult {
        solution: x,
        iterations: maxit,
        final_rel_residual: history.last().copied().unwrap_or(1.0),
        residual_history: history,
        breakdown: false,
        converged: false,
    }
}

/// Symmetric Gauss-Seidel: `sweeps` forward+backward passes on `A x = b`
/// starting from `x0`. The fixed point is `A^{-1} b`.
pub fn gauss_seidel_sym(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    sweeps: usize,
) -> Result<Vec<f64>> {
    assert_eq!(a.nrows(), a.ncols(), "gauss_seidel_sym needs a square matrix");
    assert_eq!(b.len(), a.nrows());
    assert_eq!(x0.len(), a.nrows());
    let n = a.nrows();
    let diag = a.diag();
    for (i, &d) in diag.iter().enumerate() {
        if d == 0.0 {
            return Err(Error::ZeroDiagonal(i));
        }
    }
    let mut x = x0.to_vec();
    for _ in 0..sweeps {
        for i in 0..n {
            let (cols, vals) = a.row(i);
            let mut s = b[i];
            for (&j, &v) in cols.iter().zip(vals) {
                if j != i {
                    s -= v * x[j];
                }
            }
            x[i] = s / diag[i];
        }
        for i in (0..n).rev() {
            let (cols, vals) = a.row(i);
            let mut s = b[i];
            for (&j, &v) in cols.iter().zip(vals) {
                if j != i {
                    s -= v * x[j];
                }
            }
            x[i] = s / diag[i];
        }
    }
    Ok(x)
}

/// Result of a power-iteration norm estimate.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    /// Estimated 2-norm (largest singular value).
    pub value: f64,
    /// Iterations performed.
    pub iterations: usize,
    /// False when `maxit` was exhausted before successive estimates
    /// settled; the value returned is still the best available.
    pub converged: bool,
}

/// Estimates the 2-norm of a (possibly rectangular) operator by power
/// iteration on `op^T op`; the caller supplies the adjoint.
///
/// Converged when successive singular-value estimates differ by less than
/// `tol` relatively. The start vector is a fixed pseudo-random vector, so
/// runs are reproducible.
pub fn power_norm(
    op: &dyn LinearOperator,
    op_adjoint: &dyn LinearOperator,
    tol: f64,
    maxit: usize,
) -> NormEstimate {
    assert_eq!(op.nrows(), op_adjoint.ncols(), "adjoint shape mismatch");
    assert_eq!(op.ncols(), op_adjoint.nrows(), "adjoint shape mismatch");
    let n = op.ncols();
    let mut rng = SplitMix64::new(0x9e3779b9 ^ (n as u64));
    let mut v: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if vn == 0.0 || n == 0 {
        return NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    for x in &mut v {
        *x /= vn;
    }

    let mut sigma_prev = 0.0f64;
    for k in 1..=maxit {
        let w = op.apply(&v);
        let sigma = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sigma == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: k,
                converged: true,
            };
        }
        if (sigma - sigma_prev).abs() <= tol * sigma {
            return NormEstimate {
                value: sigma,
                iterations: k,
                converged: true,
            };
        }
        sigma_prev = sigma;
        let u = op_adjoint.apply(&w);
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if un == 0.0 {
            return NormEstimate {
                value: sigma,
                iterations: k,
                converged: true,
            };
        }
        v = u;
        for x in &mut v {
            *x /= un;
        }
    }
    NormEstimate {
        value: sigma_prev,
        iterations: maxit,
        converged: false,
    }
}

/// Power-iteration estimate of the weighted operator norm
/// `sup ||op u||_{M_out} / ||u||_{M_in}` for a rectangular operator,
/// given its `(M_in, M_out)`-adjoint `adjoint = M_in^{-1} op^T M_out`
/// (the caller supplies the adjoint, including any mass solves it
/// needs). Successive Rayleigh estimates increase monotonically, so the
/// value converges to the norm from below.
pub fn power_norm_weighted(
    op: &dyn LinearOperator,
    adjoint: &dyn LinearOperator,
    m_out: &SparseMatrix,
    m_in: &SparseMatrix,
    tol: f64,
    maxit: usize,
) -> NormEstimate {
    assert_eq!(op.nrows(), adjoint.ncols(), "adjoint shape mismatch");
    assert_eq!(op.ncols(), adjoint.nrows(), "adjoint shape mismatch");
    let n = op.ncols();
    let m_norm = |m: &SparseMatrix, x: &[f64]| -> f64 {
        let mx = m.spmv(x);
        x.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    };
    let mut rng = SplitMix64::new(0x517c_c1b7 ^ (n as u64));
    let mut v: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
    let nv = m_norm(m_in, &v);
    if nv == 0.0 || n == 0 {
        return NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    for x in &mut v {
        *x /= nv;
    }

    let mut sigma_prev = 0.0f64;
    for k in 1..=maxit {
        let w = op.apply(&v);
        let sigma = m_norm(m_out, &w);
        if sigma == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: k,
                converged: true,
            };
        }
        if (sigma - sigma_prev).abs() <= tol * sigma {
            return NormEstimate {
                value: sigma,
                iterations: k,
                converged: true,
            };
        }
        sigma_prev = sigma;
        let u = adjoint.apply(&w);
        let un = m_norm(m_in, &u);
        if un == 0.0 {
            return NormEstimate {
                value: sigma,
                iterations: k,
                converged: true,
            };
        }
        v = u;
        for x in &mut v {
            *x /= un;
        }
    }
    NormEstimate {
        value: sigma_prev,
        iterations: maxit,
        converged: false,
    }
}

/// Largest eigenvalue of `D^{-1} A` for SPD `A` with diagonal `D`, via
/// power iteration on the symmetrized form `D^{-1/2} A D^{-1/2}`.
pub fn power_lambda_max_dinv_a(a: &SparseMatrix, tol: f64, maxit: usize) -> Result<f64> {
    let diag = a.diag();
    for (i, &d) in diag.iter().enumerate() {
        if d <= 0.0 {
            return Err(Error::ZeroDiagonal(i));
        }
    }
    let dis: Vec<f64> = diag.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let n = a.nrows();
    let sym = crate::operator::FnOperator::new(n, n, move |x| {
        let scaled: Vec<f64> = x.iter().zip(&dis).map(|(v, s)| v * s).collect();
        let mut y = a.spmv(&scaled);
        for (v, s) in y.iter_mut().zip(&dis) {
            *v *= s;
        }
        y
    });
    Ok(power_norm(&sym, &sym, tol, maxit).value)
}
