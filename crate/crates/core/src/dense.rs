//! Small dense matrices for desk-scale analysis and coarse solves.
//!
//! Everything here is deterministic and allocation-only: Cholesky
//! factorization, a symmetric eigensolver (Householder tridiagonalization
//! followed by implicit-shift QL), matrix powers of SPD matrices, and
//! spectral norms. Sizes are expected to stay in the low thousands.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float::FloatExt;
use crate::sparse::SparseMatrix;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Zero matrix of the given shape.
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    /// The n-by-n identity.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Densifies a sparse matrix.
    pub fn from_sparse(a: &SparseMatrix) -> Self {
        let mut m = Self::zeros(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// Builds a matrix whose j-th column is `columns[j]`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let ncols = columns.len();
        let nrows = if ncols == 0 { 0 } else { columns[0].len() };
        let mut m = Self::zeros(nrows, ncols);
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), nrows, "ragged columns");
            for i in 0..nrows {
                m.set(i, j, col[i]);
            }
        }
        m
    }

    /// Number of rows.
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    /// Number of columns.
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Entry (i, j).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    /// Sets entry (i, j).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    /// Transpose.
    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Dense product `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "dense matmul dimension mismatch");
        let mut c = Self::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a_ik = self.get(i, k);
                if a_ik == 0.0 {
                    continue;
                }
                for j in 0..other.ncols {
                    c.data[i * other.ncols + j] += a_ik * other.get(k, j);
                }
            }
        }
        c
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "dense mul_vec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for j in 0..self.ncols {
                acc += self.get(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut c = self.clone();
        for (ci, oi) in c.data.iter_mut().zip(&other.data) {
            *ci += s * oi;
        }
        c
    }

    /// Scales all entries.
    pub fn scale(&self, s: f64) -> Self {
        let mut c = self.clone();
        for v in &mut c.data {
            *v *= s;
        }
        c
    }

    /// Symmetric part `(A + A^T) / 2`.
    pub fn symmetrize(&self) -> Self {
        assert_eq!(self.nrows, self.ncols);
        let mut c = Self::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                c.set(i, j, 0.5 * (self.get(i, j) + self.get(j, i)));
            }
        }
        c
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| FloatExt::max(m, v.abs()))
    }
}

/// Cholesky factorization `A = L L^T` of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    /// Factors `a`; fails with [`Error::NotSpd`] if a pivot is not positive.
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols(), "cholesky needs a square matrix");
        let n = a.nrows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotSpd(format!("pivot {d:.3e} at index {j}")));
            }
            let dj = d.sqrt();
            l.set(j, j, dj);
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / dj);
            }
        }
        Ok(Self { l })
    }

    /// Problem size.
    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A x = b`.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // forward: L y = b
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l.get(i, k) * x[k];
            }
            x[i] = s / self.l.get(i, i);
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l.get(k, i) * x[k];
            }
            x[i] = s / self.l.get(i, i);
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.n());
        let mut x = DenseMatrix::zeros(b.nrows(), b.ncols());
        let mut col = vec![0.0; b.nrows()];
        for j in 0..b.ncols() {
            for i in 0..b.nrows() {
                col[i] = b.get(i, j);
            }
            let sol = self.solve_vec(&col);
            for i in 0..b.nrows() {
                x.set(i, j, sol[i]);
            }
        }
        x
    }

    /// The inverse matrix `A^{-1}`.
    pub fn inverse(&self) -> DenseMatrix {
        self.solve_matrix(&DenseMatrix::identity(self.n()))
    }

    /// Solves `L Y = B` with only the lower triangular factor.
    pub fn solve_lower_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let n = self.n();
        assert_eq!(b.nrows(), n);
        let mut y = b.clone();
        for j in 0..b.ncols() {
            for i in 0..n {
                let mut s = y.get(i, j);
                for k in 0..i {
                    s -= self.l.get(i, k) * y.get(k, j);
                }
                y.set(i, j, s / self.l.get(i, i));
            }
        }
        y
    }
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Eigenvalues come back ascending; `vectors` holds the matching
/// orthonormal eigenvectors as columns.
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `k` pairing with `values[k]`.
    pub vectors: DenseMatrix,
}

/// Symmetric eigensolver: Householder tridiagonalization followed by the
/// implicit-shift QL iteration, transforms accumulated.
pub fn sym_eigen(a: &DenseMatrix) -> Result<SymEigen> {
    assert_eq!(a.nrows(), a.ncols(), "sym_eigen needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vec::new(),
            vectors: DenseMatrix::zeros(0, 0),
        });
    }
    let mut v = a.clone();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];

    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;

    // Sort ascending, reordering eigenvector columns.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).expect("NaN eigenvalue"));
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (newj, &oldj) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, newj, v.get(i, oldj));
        }
    }
    Ok(SymEigen { values, vectors })
}

// Householder reduction to symmetric tridiagonal form. On exit `v` holds
// the accumulated orthogonal transformation, `d` the diagonal and `e` the
// subdiagonal (e[0] = 0).
fn tred2(v: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v.get(n - 1, j);
    }

    for i in (1..n).rev() {
        let mut scale = 0.0f64;
        let mut h = 0.0f64;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v.get(i - 1, j);
                v.set(i, j, 0.0);
                v.set(j, i, 0.0);
            }
        } else {
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v.set(j, i, f);
                let mut g = e[j] + v.get(j, j) * f;
                for k in j + 1..i {
                    g += v.get(k, j) * d[k];
                    e[k] += v.get(k, j) * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    let val = v.get(k, j) - (f * e[k] + g * d[k]);
                    v.set(k, j, val);
                }
                d[j] = v.get(i - 1, j);
                v.set(i, j, 0.0);
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v.set(n - 1, i, v.get(i, i));
        v.set(i, i, 1.0);
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v.get(k, i + 1) / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v.get(k, i + 1) * v.get(k, j);
                }
                for k in 0..=i {
                    let val = v.get(k, j) - g * d[k];
                    v.set(k, j, val);
                }
            }
        }
        for k in 0..=i {
            v.set(k, i + 1, 0.0);
        }
    }
    for j in 0..n {
        d[j] = v.get(n - 1, j);
        v.set(n - 1, j, 0.0);
    }
    v.set(n - 1, n - 1, 1.0);
    e[0] = 0.0;
}

// Implicit-shift QL iteration on the tridiagonal (d, e), rotations applied
// to the columns of `v`.
fn tql2(v: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;

    for l in 0..n {
        tst1 = FloatExt::max(tst1, d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 50 {
                    return Err(Error::EigenNoConvergence(l));
                }

                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0f64;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    for k in 0..n {
                        h = v.get(k, i + 1);
                        v.set(k, i + 1, s * v.get(k, i) + c * h);
                        v.set(k, i, c * v.get(k, i) - s * h);
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// `A^p` for SPD `A` via eigendecomposition; `p = 0.5` gives the matrix
/// square root, `p = -0.5` its inverse.
pub fn spd_power(a: &DenseMatrix, p: f64) -> Result<DenseMatrix> {
    let eig = sym_eigen(a)?;
    let n = a.nrows();
    if let Some(&min) = eig.values.first() {
        if min <= 0.0 {
            return Err(Error::NotSpd(format!("smallest eigenvalue {min:.3e}")));
        }
    }
    let mut scaled = eig.vectors.clone();
    for j in 0..n {
        let lp = (eig.values[j].ln() * p).exp();
        for i in 0..n {
            scaled.set(i, j, scaled.get(i, j) * lp);
        }
    }
    Ok(scaled.matmul(&eig.vectors.transpose()))
}

/// Spectral norm (largest singular value) of a dense matrix, computed from
/// the symmetric eigenproblem for `B^T B`.
pub fn spectral_norm(b: &DenseMatrix) -> Result<f64> {
    let bt_b = b.transpose().matmul(b);
    let eig = sym_eigen(&bt_b.symmetrize())?;
    let max = eig.values.last().copied().unwrap_or(0.0);
    Ok(FloatExt::max(max, 0.0).sqrt())
}

/// Generalized symmetric eigenvalues of the pencil `X v = lambda Y v` with
/// `Y` SPD, via Cholesky reduction to a standard symmetric problem.
pub fn generalized_sym_eigenvalues(x: &DenseMatrix, y: &DenseMatrix) -> Result<Vec<f64>> {
    let chol = Cholesky::factor(y)?;
    // C = L^{-1} X L^{-T}
    let w = chol.solve_lower_matrix(x);
    let c = chol.solve_lower_matrix(&w.transpose());
    Ok(sym_eigen(&c.symmetrize())?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::float::SplitMix64;

    fn random_spd(rng: &mut SplitMix64, n: usize) -> DenseMatrix {
        let mut b = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                b.set(i, j, rng.next_f64());
            }
        }
        // B^T B + n * I is comfortably SPD
        let mut a = b.transpose().matmul(&b);
        for i in 0..n {
            a.set(i, i, a.get(i, i) + n as f64);
        }
        a
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let mut rng = SplitMix64::new(1);
        let a = random_spd(&mut rng, 12);
        let x_true: Vec<f64> = (0..12).map(|i| (i as f64) - 3.0).collect();
        let b = a.mul_vec(&x_true);
        let x = Cholesky::factor(&a).unwrap().solve_vec(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = DenseMatrix::identity(3);
        a.set(2, 2, -1.0);
        assert!(matches!(Cholesky::factor(&a), Err(Error::NotSpd(_))));
    }

    #[test]
    fn eigen_diagonal_matrix() {
        let mut a = DenseMatrix::zeros(3, 3);
        a.set(0, 0, 3.0);
        a.set(1, 1, 1.0);
        a.set(2, 2, 0.5);
        let eig = sym_eigen(&a).unwrap();
        assert!((eig.values[0] - 0.5).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        assert!((eig.values[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let mut rng = SplitMix64::new(5);
        let a = random_spd(&mut rng, 15);
        let eig = sym_eigen(&a).unwrap();
        // A = V diag(d) V^T
        let mut vd = eig.vectors.clone();
        for j in 0..15 {
            for i in 0..15 {
                vd.set(i, j, vd.get(i, j) * eig.values[j]);
            }
        }
        let rebuilt = vd.matmul(&eig.vectors.transpose());
        let diff = rebuilt.add_scaled(&a, -1.0).max_abs();
        assert!(diff < 1e-10 * a.max_abs(), "reconstruction error {diff}");
        // orthonormality
        let vtv = eig.vectors.transpose().matmul(&eig.vectors);
        let err = vtv.add_scaled(&DenseMatrix::identity(15), -1.0).max_abs();
        assert!(err < 1e-12);
    }

    #[test]
    fn spd_sqrt_squares_back() {
        let mut rng = SplitMix64::new(9);
        let a = random_spd(&mut rng, 10);
        let r = spd_power(&a, 0.5).unwrap();
        let diff = r.matmul(&r).add_scaled(&a, -1.0).max_abs();
        assert!(diff < 1e-9 * a.max_abs());
        let ri = spd_power(&a, -0.5).unwrap();
        let prod = r.matmul(&ri);
        let err = prod.add_scaled(&DenseMatrix::identity(10), -1.0).max_abs();
        assert!(err < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_power_of_known_matrix() {
        // sigma_max of diag(3, 1, 0.5) embedded in a 3x2 slice
        let mut b = DenseMatrix::zeros(3, 2);
        b.set(0, 0, 3.0);
        b.set(1, 1, 1.0);
        b.set(2, 0, 0.0);
        assert!((spectral_norm(&b).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn generalized_eigen_identity_pencil() {
        let mut rng = SplitMix64::new(13);
        let a = random_spd(&mut rng, 8);
        let vals = generalized_sym_eigenvalues(&a, &a).unwrap();
        for v in vals {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }
}
