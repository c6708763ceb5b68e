//! Error type shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by mesh construction, assembly, hierarchy building and
/// the iterative solvers.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A mesh was requested with an unsupported spatial dimension.
    #[error("unsupported mesh dimension {0}, expected 2 or 3")]
    BadDimension(usize),

    /// A structured mesh was requested with fewer than one cell per side.
    #[error("cells_per_side must be at least 1, got {0}")]
    BadCellCount(usize),

    /// A mesh failed a validity check (indices, degeneracy, box shape).
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    /// The diffusion coefficient was not strictly positive where sampled.
    #[error("coefficient must be positive, got {value} at quadrature point {point:?}")]
    NonPositiveCoefficient {
        /// Offending value.
        value: f64,
        /// Physical coordinates of the quadrature point.
        point: [f64; 3],
    },

    /// Gauss-Seidel hit a zero diagonal entry.
    #[error("zero diagonal entry in row {0}")]
    ZeroDiagonal(usize),

    /// A matrix expected to be symmetric positive definite was not.
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    /// A dense computation was requested above the configured size cap.
    #[error("dense computation of size {size} exceeds cap {cap}")]
    SizeCapExceeded {
        /// Requested problem size.
        size: usize,
        /// Configured cap.
        cap: usize,
    },

    /// `aggregate` was called on an empty matrix.
    #[error("cannot aggregate an empty matrix")]
    EmptyMatrix,

    /// Geometric transfer requested between non-nested meshes.
    #[error("meshes are not nested: {0}")]
    MeshesNotNested(String),

    /// An inner iterative solve failed to reach its tolerance.
    #[error("{context} solve did not converge: residual {final_residual:.3e} after {iterations} iterations")]
    InnerSolve {
        /// Which solve failed (forward, mass, coarse Hessian, ...).
        context: &'static str,
        /// Iterations performed.
        iterations: usize,
        /// Relative residual at exit.
        final_residual: f64,
        /// Per-iteration relative residuals.
        history: Vec<f64>,
    },

    /// The dense symmetric eigensolver failed to converge.
    #[error("symmetric eigensolver failed to converge for eigenvalue {0}")]
    EigenNoConvergence(usize),

    /// A parameter was outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
