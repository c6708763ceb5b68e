//! Desk-scale verification instruments.
//!
//! Two routes to the two-grid approximation quality of the solution
//! operators: a matrix-free power-method estimate of
//! `|| K_j - S_j K_{j+1} Pi_j ||` and, on small problems, the exact
//! mass-weighted 2-norm through dense matrix square roots. A spectral
//! distance between SPD operators, computed densely from generalized
//! Rayleigh-quotient extremes, measures preconditioner quality, and the
//! closed-form optimal control of the manufactured problem gives exact
//! discretization errors.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::dense::{
    generalized_sym_eigenvalues, spd_power, spectral_norm, Cholesky, DenseMatrix,
};
use crate::error::{Error, Result};
use crate::float::FloatExt;
use crate::hierarchy::{CoarseningMode, Hierarchy};
use crate::mesh::Mesh;
use crate::operator::FnOperator;
use crate::optctl::ControlSolver;
use crate::solver::power_norm_weighted;

/// Problems above this many control dofs refuse dense treatment.
pub const DENSE_CAP: usize = 2000;

/// How a hierarchy under study was coarsened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxMode {
    /// Nested-mesh Q1 transfers.
    Geometric,
    /// Smoothed aggregation, aggressive first coarsening.
    AmgAggressive,
    /// Smoothed aggregation, standard coarsening throughout.
    AmgNoAggressive,
}

impl ApproxMode {
    /// Mode of a hierarchy.
    pub fn of(h: &Hierarchy) -> Self {
        match (h.mode(), h.config.aggressive_first) {
            (CoarseningMode::Geometric, _) => Self::Geometric,
            (CoarseningMode::Amg, true) => Self::AmgAggressive,
            (CoarseningMode::Amg, false) => Self::AmgNoAggressive,
        }
    }

    /// Stable name for reports.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Geometric => "geometric",
            Self::AmgAggressive => "amg-aggressive",
            Self::AmgNoAggressive => "amg-no-aggressive",
        }
    }
}

/// Per-level two-grid approximation qualities and their decay ratios.
#[derive(Debug, Clone)]
pub struct ApproxReport {
    /// Coarsening mode of the hierarchy under study.
    pub mode: ApproxMode,
    /// Power-method estimates, index j = 0 finest.
    pub a_tilde: Vec<f64>,
    /// Exact dense values where computed (small enough levels).
    pub a_exact: Vec<Option<f64>>,
    /// Decay ratios `a_tilde[j] / a_tilde[j+1]`.
    pub ratios: Vec<f64>,
}

/// Result of a dense spectral-distance computation.
#[derive(Debug, Clone, Copy)]
pub struct SpectralDistanceResult {
    /// `sup_u |ln (Xu,u) - ln (Yu,u)|`.
    pub distance: f64,
    /// Smallest generalized Rayleigh quotient of the pair.
    pub lambda_min: f64,
    /// Largest generalized Rayleigh quotient.
    pub lambda_max: f64,
}

/// Spectral distance between SPD matrices from the extreme eigenvalues of
/// the pencil `X v = lambda Y v` (Cholesky reduction, then the symmetric
/// eigensolver). Inputs must be Euclidean-symmetric positive definite;
/// weighted operators enter through their symmetric forms.
pub fn spectral_distance_dense(
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> Result<SpectralDistanceResult> {
    assert_eq!(x.nrows(), x.ncols());
    assert_eq!(y.nrows(), y.ncols());
    assert_eq!(x.nrows(), y.nrows(), "pencil dimension mismatch");
    let eig = generalized_sym_eigenvalues(x, y)?;
    let lambda_min = *eig.first().expect("nonempty pencil");
    let lambda_max = *eig.last().expect("nonempty pencil");
    if lambda_min <= 0.0 {
        return Err(Error::NotSpd(alloc::format!(
            "pencil has nonpositive eigenvalue {lambda_min:.3e}"
        )));
    }
    let distance = FloatExt::max(lambda_min.ln().abs(), lambda_max.ln().abs());
    Ok(SpectralDistanceResult {
        distance,
        lambda_min,
        lambda_max,
    })
}

// ----- dense building blocks ------------------------------------------

/// Dense solution operator `K_j = A_j^{-1} M_yu,j`.
pub fn dense_k(h: &Hierarchy, j: usize) -> Result<DenseMatrix> {
    check_cap(h, j)?;
    let level = h.level(j);
    let chol = Cholesky::factor(&DenseMatrix::from_sparse(&level.a))?;
    Ok(chol.solve_matrix(&DenseMatrix::from_sparse(&level.m_yu)))
}

/// Dense projection `Pi_j = M_u,j+1^{-1} P_j^T M_u,j`.
pub fn dense_projection(h: &Hierarchy, j: usize) -> Result<DenseMatrix> {
    check_cap(h, j)?;
    let level = h.level(j);
    let coarse = h.level(j + 1);
    let p = level.p.as_ref().expect("transfer below coarsest");
    let pt_mu =
        DenseMatrix::from_sparse(&p.transpose()).matmul(&DenseMatrix::from_sparse(&level.m_u));
    let chol = Cholesky::factor(&DenseMatrix::from_sparse(&coarse.m_u))?;
    Ok(chol.solve_matrix(&pt_mu))
}

/// Dense mass-weighted Hessian `K_j^T M_y,j K_j + beta M_u,j` (SPD).
pub fn dense_weighted_hessian(h: &Hierarchy, j: usize, beta: f64) -> Result<DenseMatrix> {
    let k = dense_k(h, j)?;
    let level = h.level(j);
    let kt_my_k = k
        .transpose()
        .matmul(&DenseMatrix::from_sparse(&level.m_y))
        .matmul(&k);
    Ok(kt_my_k
        .add_scaled(&DenseMatrix::from_sparse(&level.m_u), beta)
        .symmetrize())
}

/// Dense reduced Hessian `G_j = M_u,j^{-1} K_j^T M_y,j K_j + beta I`.
pub fn dense_hessian(h: &Hierarchy, j: usize, beta: f64) -> Result<DenseMatrix> {
    let level = h.level(j);
    let weighted = dense_weighted_hessian(h, j, beta)?;
    let chol = Cholesky::factor(&DenseMatrix::from_sparse(&level.m_u))?;
    Ok(chol.solve_matrix(&weighted))
}

/// Dense coarse-to-fine map `E_j(X) = P_j X Pi_j + beta^{-1}(I - P_j Pi_j)`.
pub fn dense_e_map(h: &Hierarchy, j: usize, beta: f64, x: &DenseMatrix) -> Result<DenseMatrix> {
    let level = h.level(j);
    let p = DenseMatrix::from_sparse(level.p.as_ref().expect("transfer below coarsest"));
    let pi = dense_projection(h, j)?;
    let p_pi = p.matmul(&pi);
    let ident = DenseMatrix::identity(level.control_size());
    Ok(p
        .matmul(&x.matmul(&pi))
        .add_scaled(&ident.add_scaled(&p_pi, -1.0), 1.0 / beta))
}

fn check_cap(h: &Hierarchy, j: usize) -> Result<()> {
    let size = h.level(j).control_size();
    if size > DENSE_CAP {
        return Err(Error::SizeCapExceeded {
            size,
            cap: DENSE_CAP,
        });
    }
    Ok(())
}

// ----- two-grid approximation quality -----------------------------------

/// Power-method estimate of `|| K_j - S_j K_{j+1} Pi_j ||` with the
/// solver's inner tolerances; relative tolerance 1e-4 on the estimate.
///
/// The norm is the `L^2` operator norm, taken with power iteration in
/// the natural pairing: the adjoint is realized through mass solves, so
/// no matrix square roots are formed and the estimate converges to the
/// exact value of [`compute_aj_exact`] from below.
pub fn estimate_aj_tilde(solver: &ControlSolver, j: usize) -> Result<f64> {
    let h = solver.hierarchy();
    assert!(
        j + 2 <= h.num_levels(),
        "a_j needs levels {j} and {}",
        j + 1
    );
    let level = h.level(j);
    let coarse = h.level(j + 1);
    let s = level.s.as_ref().expect("transfer below coarsest");
    let (n_rows, n_cols) = (level.state_size(), level.control_size());

    let err: RefCell<Option<Error>> = RefCell::new(None);
    let record = |e: Error, n: usize| -> Vec<f64> {
        *err.borrow_mut() = Some(e);
        vec![0.0; n]
    };

    // D u = K_j u - S_j K_{j+1} Pi_j u
    let op = FnOperator::new(n_rows, n_cols, |u: &[f64]| {
        let run = || -> Result<Vec<f64>> {
            let fine = solver.apply_k(j, u)?;
            let pi_u = solver.apply_projection(j, u)?;
            let coarse_y = solver.apply_k(j + 1, &pi_u)?;
            let lifted = s.spmv(&coarse_y);
            Ok(fine.iter().zip(&lifted).map(|(a, b)| a - b).collect())
        };
        run().unwrap_or_else(|e| record(e, n_rows))
    });

    // L^2 adjoint D* y = M_u,j^{-1} D^T M_y,j y with
    // D^T = K_j^T - Pi_j^T K_{j+1}^T S_j^T
    let adj = FnOperator::new(n_cols, n_rows, |y: &[f64]| {
        let run = || -> Result<Vec<f64>> {
            let my_y = level.m_y.spmv(y);
            // K_j^T (M_y y) = M_yu,j^T A_j^{-1} (M_y y)
            let v = solver.solve_state(j, &my_y, solver.problem().forward_tol)?;
            let fine = level.m_yu.spmv_transpose(&v);
            // K_{j+1}^T S_j^T (M_y y)
            let sty = s.spmv_transpose(&my_y);
            let vc = solver.solve_state(j + 1, &sty, solver.problem().forward_tol)?;
            let kc = coarse.m_yu.spmv_transpose(&vc);
            // Pi_j^T = M_u,j P_j M_u,j+1^{-1}
            let w = solver.solve_control_mass(j + 1, &kc, solver.problem().mass_tol)?;
            let lifted = level.m_u.spmv(&level.p.as_ref().expect("transfer").spmv(&w));
            let dt: Vec<f64> = fine.iter().zip(&lifted).map(|(a, b)| a - b).collect();
            solver.solve_control_mass(j, &dt, solver.problem().mass_tol)
        };
        run().unwrap_or_else(|e| record(e, n_cols))
    });

    let est = power_norm_weighted(&op, &adj, &level.m_y, &level.m_u, 1e-4, 500);
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(est.value)
}

/// Exact two-grid approximation quality
/// `a_j = || M_y^{1/2} (K_j - S_j K_{j+1} Pi_j) M_u^{-1/2} ||_2`
/// through dense factorizations; only for levels within [`DENSE_CAP`].
pub fn compute_aj_exact(h: &Hierarchy, j: usize) -> Result<f64> {
    check_cap(h, j)?;
    check_cap(h, j + 1)?;
    let level = h.level(j);
    let s = DenseMatrix::from_sparse(level.s.as_ref().expect("transfer below coarsest"));
    let k_fine = dense_k(h, j)?;
    let k_coarse = dense_k(h, j + 1)?;
    let pi = dense_projection(h, j)?;
    let diff = k_fine.add_scaled(&s.matmul(&k_coarse.matmul(&pi)), -1.0);

    let my_half = spd_power(&DenseMatrix::from_sparse(&level.m_y).symmetrize(), 0.5)?;
    let mu_inv_half = spd_power(&DenseMatrix::from_sparse(&level.m_u).symmetrize(), -0.5)?;
    spectral_norm(&my_half.matmul(&diff).matmul(&mu_inv_half))
}

/// Runs the two-grid study over every coarsening of the hierarchy:
/// power estimates everywhere, dense exact values where `with_exact` is
/// set and the level fits the dense cap.
pub fn approximation_report(solver: &ControlSolver, with_exact: bool) -> Result<ApproxReport> {
    let h = solver.hierarchy();
    let count = h.num_levels().saturating_sub(1);
    let mut a_tilde = Vec::with_capacity(count);
    let mut a_exact = Vec::with_capacity(count);
    for j in 0..count {
        a_tilde.push(estimate_aj_tilde(solver, j)?);
        if with_exact && h.level(j).control_size() <= DENSE_CAP {
            a_exact.push(Some(compute_aj_exact(h, j)?));
        } else {
            a_exact.push(None);
        }
    }
    let ratios = a_tilde.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(ApproxReport {
        mode: ApproxMode::of(h),
        a_tilde,
        a_exact,
        ratios,
    })
}

// ----- preconditioner quality --------------------------------------------

/// Dense multilevel operator `W_0`, column by column through
/// [`ControlSolver::apply_mlas`].
pub fn dense_w0(solver: &ControlSolver) -> Result<DenseMatrix> {
    let h = solver.hierarchy();
    check_cap(h, 0)?;
    let n = h.level(0).control_size();
    let mut columns = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        columns.push(solver.apply_mlas(0, &e)?);
        e[k] = 0.0;
    }
    Ok(DenseMatrix::from_columns(&columns))
}

/// Spectral distance `d(W_0, G_0^{-1})` in the control-mass inner
/// product: `W_0` is applied column by column, the Hessian inverse comes
/// from its dense formula. Use tight solver tolerances for meaningful
/// digits.
pub fn measure_preconditioner_quality(solver: &ControlSolver) -> Result<SpectralDistanceResult> {
    let h = solver.hierarchy();
    check_cap(h, 0)?;
    let m_u = DenseMatrix::from_sparse(&h.level(0).m_u);
    let beta = solver.problem().beta;

    // (W u, u)_M = u^T (M W) u and (G^{-1} u, u)_M = u^T (M Ghat^{-1} M) u
    // with Ghat = K^T M_y K + beta M_u
    let w0 = dense_w0(solver)?;
    let x = m_u.matmul(&w0).symmetrize();
    let g_hat = dense_weighted_hessian(h, 0, beta)?;
    let g_hat_inv = Cholesky::factor(&g_hat)?.inverse();
    let y = m_u.matmul(&g_hat_inv).matmul(&m_u).symmetrize();
    spectral_distance_dense(&x, &y)
}

// ----- manufactured-solution errors ---------------------------------------

/// L2 distance between a control iterate and the closed-form optimal
/// control `prod_k sin(pi x_k)` of the manufactured problem.
pub fn control_error_vs_exact(u: &[f64], mesh: &Mesh) -> f64 {
    crate::fem::l2_error_nodal(mesh, u, |x| {
        let mut v = 1.0;
        for &c in x {
            v *= (core::f64::consts::PI * c).sin();
        }
        v
    })
}

/// The desired state whose optimal control is `prod_k sin(pi x_k)`:
/// `y_d = (1/(d pi^2) + d pi^2 beta) prod_k sin(pi x_k)`.
pub fn manufactured_desired_state(dim: usize, beta: f64) -> impl Fn(&[f64]) -> f64 {
    let lam = dim as f64 * core::f64::consts::PI * core::f64::consts::PI;
    move |x: &[f64]| {
        let mut v = 1.0 / lam + lam * beta;
        for &c in x {
            v *= (core::f64::consts::PI * c).sin();
        }
        v
    }
}
