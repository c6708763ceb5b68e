//! Multilevel preconditioning of reduced-Hessian systems for
//! linear-quadratic optimal control of elliptic equations.
//!
//! The crate provides the full stack needed to set up and solve the
//! distributed control problem
//!
//! ```text
//!   min_{y,u}  1/2 ||y - y_d||^2 + beta/2 ||u||^2
//!   s.t.       -div(kappa grad y) = u  in [0,1]^d,   y = 0 on selected faces
//! ```
//!
//! after Q1 finite element discretization on structured quad/hex grids:
//!
//! * [`mesh`] — structured box meshes and uniform refinement,
//! * [`fem`] — Q1 stiffness and mass matrix assembly,
//! * [`sparse`], [`dense`], [`operator`], [`solver`] — CSR kernels, small
//!   dense factorizations and eigensolvers, and iterative solvers (CG in a
//!   weighted inner product, symmetric Gauss-Seidel, power iteration),
//! * [`hierarchy`] — smoothed-aggregation and geometric multigrid
//!   hierarchies with Galerkin coarse operators for the stiffness matrix
//!   and all mass matrices,
//! * [`optctl`] — matrix-free solution operators, reduced Hessians, the
//!   two-level and multilevel Hessian preconditioners, and the outer
//!   PCG driver,
//! * [`analysis`] — desk-scale instruments: two-grid approximation-quality
//!   estimates, dense spectral distances, and exact-solution errors.
//!
//! The crate is `no_std` (with `alloc`); IO, file formats and the command
//! line live in the companion `hessmg` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod dense;
pub mod error;
pub mod fem;
mod float;
pub mod hierarchy;
pub mod mesh;
pub mod operator;
pub mod optctl;
pub mod solver;
pub mod sparse;

pub use error::Error;
pub use sparse::SparseMatrix;
