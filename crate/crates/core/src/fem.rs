//! Q1 finite element assembly on structured box meshes.
//!
//! The state space carries homogeneous Dirichlet conditions on a chosen
//! set of box faces; eliminated vertices are deleted from rows and
//! columns (not zeroed), so the stiffness matrix stays SPD on the
//! interior. The control space is the full vertex set with no essential
//! conditions — apart from that the two spaces share the discretization.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
#[cfg(not(test))]
use crate::float::FloatExt;
use crate::mesh::{corner_is_high, Mesh};
use crate::sparse::SparseMatrix;

/// Scalar diffusion coefficient.
#[derive(Debug, Clone)]
pub enum Coefficient {
    /// Constant value.
    Constant(f64),
    /// `inside` within the ball `|x - center| <= radius`, 1 outside.
    Ball {
        /// Value inside the ball.
        inside: f64,
        /// Ball center.
        center: [f64; 3],
        /// Ball radius.
        radius: f64,
    },
}

impl Coefficient {
    /// The unit coefficient.
    pub fn one() -> Self {
        Self::Constant(1.0)
    }

    /// Ball of radius 1/4 around the domain center with contrast `inside`.
    pub fn centered_ball(inside: f64) -> Self {
        Self::Ball {
            inside,
            center: [0.5, 0.5, 0.5],
            radius: 0.25,
        }
    }

    /// Evaluates the coefficient at a point.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Ball {
                inside,
                center,
                radius,
            } => {
                let mut d2 = 0.0;
                for (a, &c) in x.iter().enumerate() {
                    d2 += (c - center[a]) * (c - center[a]);
                }
                if d2.sqrt() <= *radius {
                    *inside
                } else {
                    1.0
                }
            }
        }
    }
}

/// Which space a mass-matrix index runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Dirichlet-constrained state space (interior vertices only).
    State,
    /// Unconstrained control space (every vertex).
    Control,
}

/// A mesh together with the state/control dof maps.
#[derive(Debug, Clone)]
pub struct FeProblem {
    mesh: Mesh,
    dirichlet_faces: u8,
    state_dof: Vec<Option<usize>>,
    state_to_vertex: Vec<usize>,
}

impl FeProblem {
    /// Sets up dof maps for the given Dirichlet faces (a [`crate::mesh::face`]
    /// bitmask; 0 means no essential conditions and the spaces coincide).
    pub fn new(mesh: Mesh, dirichlet_faces: u8) -> Self {
        let nv = mesh.num_vertices();
        let mut state_dof = vec![None; nv];
        let mut state_to_vertex = Vec::new();
        for v in 0..nv {
            if !mesh.on_faces(v, dirichlet_faces) {
                state_dof[v] = Some(state_to_vertex.len());
                state_to_vertex.push(v);
            }
        }
        Self {
            mesh,
            dirichlet_faces,
            state_dof,
            state_to_vertex,
        }
    }

    /// The underlying mesh.
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// Dirichlet face bitmask.
    pub fn dirichlet_faces(&self) -> u8 {
        self.dirichlet_faces
    }

    /// Number of state dofs (vertices off the Dirichlet faces).
    pub fn num_state_dofs(&self) -> usize {
        self.state_to_vertex.len()
    }

    /// Number of control dofs (all vertices).
    pub fn num_control_dofs(&self) -> usize {
        self.mesh.num_vertices()
    }

    /// State dof index of a vertex, `None` if eliminated.
    pub fn state_dof(&self, vertex: usize) -> Option<usize> {
        self.state_dof[vertex]
    }

    /// Vertex carrying a state dof.
    pub fn state_vertex(&self, dof: usize) -> usize {
        self.state_to_vertex[dof]
    }

    /// Expands a state vector to a full nodal vector, zero on eliminated
    /// vertices.
    pub fn expand_state(&self, state: &[f64]) -> Vec<f64> {
        assert_eq!(state.len(), self.num_state_dofs());
        let mut nodal = vec![0.0; self.mesh.num_vertices()];
        for (dof, &v) in self.state_to_vertex.iter().enumerate() {
            nodal[v] = state[dof];
        }
        nodal
    }

    /// Samples a function at the state-dof vertices.
    pub fn sample_state(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.state_to_vertex
            .iter()
            .map(|&v| f(self.mesh.vertex(v)))
            .collect()
    }

    /// Samples a function at every vertex (control layout).
    pub fn sample_control(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.mesh.num_vertices())
            .map(|v| f(self.mesh.vertex(v)))
            .collect()
    }
}

// 2-point Gauss rule per dimension: exact for the Q1 mass integrand on
// affine boxes.
const GAUSS2: [(f64, f64); 2] = [
    (-0.577_350_269_189_625_76, 1.0),
    (0.577_350_269_189_625_76, 1.0),
];

fn shape_value(dim: usize, k: usize, xi: &[f64]) -> f64 {
    let mut v = 1.0;
    for (a, &x) in xi.iter().enumerate().take(dim) {
        let s = if corner_is_high(dim, k, a) { 1.0 } else { -1.0 };
        v *= 0.5 * (1.0 + s * x);
    }
    v
}

fn shape_grad(dim: usize, k: usize, xi: &[f64], grad: &mut [f64]) {
    for b in 0..dim {
        let mut g = 1.0;
        for a in 0..dim {
            let s = if corner_is_high(dim, k, a) { 1.0 } else { -1.0 };
            if a == b {
                g *= 0.5 * s;
            } else {
                g *= 0.5 * (1.0 + s * xi[a]);
            }
        }
        grad[b] = g;
    }
}

fn for_each_quad_point(
    dim: usize,
    lo: &[f64; 3],
    hi: &[f64; 3],
    mut body: impl FnMut(&[f64], &[f64; 3], f64),
) {
    // Axis-aligned cells have a diagonal Jacobian h_a / 2.
    let mut half = [0.0f64; 3];
    let mut det = 1.0;
    for a in 0..dim {
        half[a] = 0.5 * (hi[a] - lo[a]);
        det *= half[a];
    }
    let npts = 1usize << dim;
    let mut xi = [0.0f64; 3];
    let mut x = [0.0f64; 3];
    for q in 0..npts {
        let mut w = det;
        for a in 0..dim {
            let (p, pw) = GAUSS2[(q >> a) & 1];
            xi[a] = p;
            w *= pw;
            x[a] = lo[a] + half[a] * (p + 1.0);
        }
        body(&xi[..dim], &x, w);
    }
}

/// Assembles the stiffness matrix `a(y, v) = \int kappa grad y . grad v`
/// on the state space, with `kappa` sampled at the quadrature points.
pub fn assemble_stiffness(p: &FeProblem, kappa: &Coefficient) -> Result<SparseMatrix> {
    let mesh = p.mesh();
    let dim = mesh.dim();
    let npe = mesh.nodes_per_element();
    let n = p.num_state_dofs();
    let mut triplets = Vec::new();
    let mut grads = vec![0.0f64; npe * dim];
    let mut local = vec![0.0f64; npe * npe];

    for e in 0..mesh.num_elements() {
        let (lo, hi) = mesh.element_box(e)?;
        let mut half = [0.0f64; 3];
        for a in 0..dim {
            half[a] = 0.5 * (hi[a] - lo[a]);
        }
        local.iter_mut().for_each(|v| *v = 0.0);
        let mut bad_kappa: Option<Error> = None;
        for_each_quad_point(dim, &lo, &hi, |xi, x, w| {
            let kv = kappa.value(&x[..dim]);
            if kv <= 0.0 && bad_kappa.is_none() {
                bad_kappa = Some(Error::NonPositiveCoefficient {
                    value: kv,
                    point: *x,
                });
            }
            for k in 0..npe {
                shape_grad(dim, k, xi, &mut grads[k * dim..(k + 1) * dim]);
                for a in 0..dim {
                    // reference gradient -> physical gradient
                    grads[k * dim + a] /= half[a];
                }
            }
            for k in 0..npe {
                for l in 0..npe {
                    let mut dot = 0.0;
                    for a in 0..dim {
                        dot += grads[k * dim + a] * grads[l * dim + a];
                    }
                    local[k * npe + l] += w * kv * dot;
                }
            }
        });
        if let Some(err) = bad_kappa {
            return Err(err);
        }
        let conn = mesh.element(e);
        for k in 0..npe {
            let Some(row) = p.state_dof(conn[k]) else {
                continue;
            };
            for l in 0..npe {
                let Some(col) = p.state_dof(conn[l]) else {
                    continue;
                };
                triplets.push((row, col, local[k * npe + l]));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(n, n, triplets))
}

/// Assembles a mass matrix between the chosen spaces: state x state for
/// `M_y`, control x control for `M_u`, state x control for `M_yu`.
/// Eliminated state rows/columns are deleted; control indices always keep
/// the full vertex set.
pub fn assemble_mass(p: &FeProblem, row_space: Space, col_space: Space) -> SparseMatrix {
    let mesh = p.mesh();
    let dim = mesh.dim();
    let npe = mesh.nodes_per_element();
    let dof_of = |space: Space, vertex: usize| -> Option<usize> {
        match space {
            Space::State => p.state_dof(vertex),
            Space::Control => Some(vertex),
        }
    };
    let size_of = |space: Space| match space {
        Space::State => p.num_state_dofs(),
        Space::Control => p.num_control_dofs(),
    };

    let mut triplets = Vec::new();
    let mut local = vec![0.0f64; npe * npe];
    for e in 0..mesh.num_elements() {
        let (lo, hi) = mesh.element_box(e).expect("validated at construction");
        local.iter_mut().for_each(|v| *v = 0.0);
        for_each_quad_point(dim, &lo, &hi, |xi, _x, w| {
            for k in 0..npe {
                let nk = shape_value(dim, k, xi);
                for l in 0..npe {
                    local[k * npe + l] += w * nk * shape_value(dim, l, xi);
                }
            }
        });
        let conn = mesh.element(e);
        for k in 0..npe {
            let Some(row) = dof_of(row_space, conn[k]) else {
                continue;
            };
            for l in 0..npe {
                let Some(col) = dof_of(col_space, conn[l]) else {
                    continue;
                };
                triplets.push((row, col, local[k * npe + l]));
            }
        }
    }
    SparseMatrix::from_triplets(size_of(row_space), size_of(col_space), triplets)
}

// 3-point Gauss rule, used for error integration against non-polynomial
// exact solutions.
const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    (0.0, 0.888_888_888_888_888_9),
    (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
];

/// L2 distance between the Q1 interpolant of `nodal` and `exact`,
/// integrated element by element with a 3-point Gauss rule per dimension.
pub fn l2_error_nodal(mesh: &Mesh, nodal: &[f64], exact: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(nodal.len(), mesh.num_vertices());
    let dim = mesh.dim();
    let npe = mesh.nodes_per_element();
    let npts = 3usize.pow(dim as u32);
    let mut total = 0.0;
    let mut xi = [0.0f64; 3];
    let mut x = [0.0f64; 3];
    for e in 0..mesh.num_elements() {
        let (lo, hi) = mesh.element_box(e).expect("validated at construction");
        let mut half = [0.0f64; 3];
        let mut det = 1.0;
        for a in 0..dim {
            half[a] = 0.5 * (hi[a] - lo[a]);
            det *= half[a];
        }
        let conn = mesh.element(e);
        for q in 0..npts {
            let mut w = det;
            let mut idx = q;
            for a in 0..dim {
                let (pt, pw) = GAUSS3[idx % 3];
                idx /= 3;
                xi[a] = pt;
                w *= pw;
                x[a] = lo[a] + half[a] * (pt + 1.0);
            }
            let mut uh = 0.0;
            for k in 0..npe {
                uh += nodal[conn[k]] * shape_value(dim, k, &xi);
            }
            let diff = uh - exact(&x[..dim]);
            total += w * diff * diff;
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, face};
    use crate::operator::FnOperator;
    use crate::solver::{cg, gauss_seidel_sym};
    use core::f64::consts::PI;

    fn unit_quad_problem() -> FeProblem {
        FeProblem::new(build_structured_mesh(2, 1).unwrap(), 0)
    }

    #[test]
    fn single_q1_stiffness_entries() {
        let p = unit_quad_problem();
        let a = assemble_stiffness(&p, &Coefficient::one()).unwrap();
        // symbolic reference-element integration: diagonal 2/3,
        // opposite corners -1/3, adjacent corners -1/6; vertex ids are
        // lexicographic, so (0,0)-(1,1) is the pair (0, 3)
        for i in 0..4 {
            assert!((a.get(i, i) - 2.0 / 3.0).abs() < 1e-14);
        }
        assert!((a.get(0, 3) + 1.0 / 3.0).abs() < 1e-14);
        assert!((a.get(1, 2) + 1.0 / 3.0).abs() < 1e-14);
        assert!((a.get(0, 1) + 1.0 / 6.0).abs() < 1e-14);
        assert!((a.get(0, 2) + 1.0 / 6.0).abs() < 1e-14);
        // constants in the kernel: zero row sums
        for i in 0..4 {
            let (_, vals) = a.row(i);
            let sum: f64 = vals.iter().sum();
            assert!(sum.abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_is_linear_in_kappa() {
        let p = FeProblem::new(build_structured_mesh(2, 3).unwrap(), face::all(2));
        let a1 = assemble_stiffness(&p, &Coefficient::one()).unwrap();
        let a2 = assemble_stiffness(&p, &Coefficient::Constant(2.0)).unwrap();
        for i in 0..a1.nrows() {
            let (cols, vals) = a1.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                assert!((a2.get(i, j) - 2.0 * v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stiffness_rejects_nonpositive_kappa() {
        let p = unit_quad_problem();
        let err = assemble_stiffness(&p, &Coefficient::Constant(-1.0));
        assert!(matches!(err, Err(Error::NonPositiveCoefficient { .. })));
    }

    #[test]
    fn stiffness_symmetric_and_positive_definite() {
        let p = FeProblem::new(build_structured_mesh(2, 4).unwrap(), face::all(2));
        let a = assemble_stiffness(&p, &Coefficient::one()).unwrap();
        assert!(a.asymmetry().unwrap() < 1e-12);
        let ad = crate::dense::DenseMatrix::from_sparse(&a);
        let eig = crate::dense::sym_eigen(&ad).unwrap();
        assert!(eig.values[0] > 0.0, "smallest eigenvalue {}", eig.values[0]);
    }

    #[test]
    fn single_q1_mass_entries() {
        let p = unit_quad_problem();
        let m = assemble_mass(&p, Space::Control, Space::Control);
        for i in 0..4 {
            assert!((m.get(i, i) - 1.0 / 9.0).abs() < 1e-14);
        }
        assert!((m.get(0, 1) - 1.0 / 18.0).abs() < 1e-14);
        assert!((m.get(0, 2) - 1.0 / 18.0).abs() < 1e-14);
        assert!((m.get(0, 3) - 1.0 / 36.0).abs() < 1e-14);
    }

    #[test]
    fn control_mass_entries_sum_to_domain_volume() {
        for dim in [2usize, 3] {
            let p = FeProblem::new(build_structured_mesh(dim, 3).unwrap(), face::all(dim));
            let m = assemble_mass(&p, Space::Control, Space::Control);
            let mut sum = 0.0;
            for i in 0..m.nrows() {
                let (_, vals) = m.row(i);
                sum += vals.iter().sum::<f64>();
            }
            assert!((sum - 1.0).abs() < 1e-12, "dim {dim}: sum {sum}");
        }
    }

    #[test]
    fn coupling_mass_equals_others_without_dirichlet() {
        let p = FeProblem::new(build_structured_mesh(2, 2).unwrap(), 0);
        let m_y = assemble_mass(&p, Space::State, Space::State);
        let m_u = assemble_mass(&p, Space::Control, Space::Control);
        let m_yu = assemble_mass(&p, Space::State, Space::Control);
        assert_eq!(m_y, m_u);
        assert_eq!(m_y, m_yu);
    }

    #[test]
    fn dirichlet_elimination_deletes_rows() {
        let p = FeProblem::new(build_structured_mesh(2, 4).unwrap(), face::all(2));
        assert_eq!(p.num_state_dofs(), 9); // 3x3 interior
        assert_eq!(p.num_control_dofs(), 25);
        let a = assemble_stiffness(&p, &Coefficient::one()).unwrap();
        assert_eq!(a.nrows(), 9);
        let m_yu = assemble_mass(&p, Space::State, Space::Control);
        assert_eq!((m_yu.nrows(), m_yu.ncols()), (9, 25));
    }

    #[test]
    fn mass_solve_with_gs_preconditioner_is_fast() {
        for n in [4usize, 8, 16] {
            let p = FeProblem::new(build_structured_mesh(2, n).unwrap(), face::all(2));
            let m = assemble_mass(&p, Space::Control, Space::Control);
            let b: Vec<f64> = (0..m.nrows()).map(|i| (i as f64 * 0.37).sin()).collect();
            let gs = FnOperator::new(m.nrows(), m.nrows(), |r| {
                gauss_seidel_sym(&m, r, &vec![0.0; r.len()], 1).unwrap()
            });
            let res = cg(&m, &b, None, Some(&gs), 1e-8, 60);
            assert!(res.converged, "n = {n}");
            assert!(res.iterations <= 30, "n = {n}: {} iterations", res.iterations);
        }
    }

    #[test]
    fn poisson_l2_convergence_is_second_order() {
        // -lap y = 2 pi^2 sin(pi x) sin(pi y), y = sin(pi x) sin(pi y)
        let exact = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
        let rhs = |x: &[f64]| 2.0 * PI * PI * exact(x);
        let mut errors = Vec::new();
        for n in [8usize, 16, 32] {
            let p = FeProblem::new(build_structured_mesh(2, n).unwrap(), face::all(2));
            let a = assemble_stiffness(&p, &Coefficient::one()).unwrap();
            let m_yu = assemble_mass(&p, Space::State, Space::Control);
            let f_nodal = p.sample_control(rhs);
            let b = m_yu.spmv(&f_nodal);
            let res = cg(&a, &b, None, None, 1e-12, 2000);
            assert!(res.converged);
            let nodal = p.expand_state(&res.solution);
            errors.push(l2_error_nodal(p.mesh(), &nodal, exact));
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).ln() / 2.0f64.ln();
            assert!(
                (1.8..=2.2).contains(&order),
                "observed order {order}, errors {errors:?}"
            );
        }
    }
}
