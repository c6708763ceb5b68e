//! Matrix-free linear operators.
//!
//! Solution operators, reduced Hessians and preconditioners are never
//! assembled; they enter the solvers through this trait. An operator may
//! be self-adjoint with respect to a weighted inner product rather than
//! the Euclidean one — that property is the caller's contract and is
//! spot-checked in tests, not encoded in the type.

use alloc::vec::Vec;

use crate::sparse::SparseMatrix;

/// A linear map `R^ncols -> R^nrows`.
pub trait LinearOperator {
    /// Output dimension.
    fn nrows(&self) -> usize;
    /// Input dimension.
    fn ncols(&self) -> usize;
    /// Applies the operator.
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

impl LinearOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        SparseMatrix::nrows(self)
    }
    fn ncols(&self) -> usize {
        SparseMatrix::ncols(self)
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.spmv(x)
    }
}

/// Operator defined by a closure.
pub struct FnOperator<F: Fn(&[f64]) -> Vec<f64>> {
    nrows: usize,
    ncols: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnOperator<F> {
    /// Wraps `f` as an `nrows x ncols` operator.
    pub fn new(nrows: usize, ncols: usize, f: F) -> Self {
        Self { nrows, ncols, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> LinearOperator for FnOperator<F> {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "operator input dimension mismatch");
        let y = (self.f)(x);
        assert_eq!(y.len(), self.nrows, "operator output dimension mismatch");
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fn_operator_is_linear() {
        let a = SparseMatrix::from_triplets(
            3,
            3,
            alloc::vec![(0, 0, 2.0), (0, 1, -1.0), (1, 1, 3.0), (2, 0, 1.0), (2, 2, 5.0)],
        );
        let op = FnOperator::new(3, 3, |x| a.spmv(x));
        let x = [1.0, 2.0, 3.0];
        let y = [-2.0, 0.5, 4.0];
        let alpha = 1.7;
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| alpha * u + v).collect();
        let lhs = op.apply(&combo);
        let ax = op.apply(&x);
        let ay = op.apply(&y);
        for i in 0..3 {
            let rhs = alpha * ax[i] + ay[i];
            assert!((lhs[i] - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        }
    }
}
