//! Multilevel hierarchies: smoothed-aggregation and geometric coarsening
//! with Galerkin coarse operators.
//!
//! A hierarchy carries, per level, the stiffness matrix on the state
//! space, the three mass matrices, and the prolongators `S` (states) and
//! `P` (controls) that embed the next-coarser level. Coarse matrices are
//! always the Galerkin products `S^T A S`, `S^T M_y S`, `P^T M_u P` and
//! `S^T M_yu P` of the level above.
//!
//! The control space has no stiffness matrix of its own, so its
//! aggregation runs on the state operator assembled without Dirichlet
//! elimination. That keeps `P` independent of the boundary conditions
//! while the state and control hierarchies remain distinct throughout.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fem::{assemble_mass, assemble_stiffness, Coefficient, FeProblem, Space};
use crate::float::FloatExt;
use crate::mesh::{build_structured_mesh, coord_key, corner_is_high, Mesh};
use crate::solver::power_lambda_max_dinv_a;
use crate::sparse::SparseMatrix;

const UNASSIGNED: usize = usize::MAX;

/// A partition of fine dofs into aggregates.
#[derive(Debug, Clone)]
pub struct Aggregation {
    /// Number of fine dofs.
    pub n_fine: usize,
    /// Number of aggregates.
    pub n_aggregates: usize,
    /// Aggregate id of each fine dof.
    pub assignment: Vec<usize>,
}

// Strength graph {(i,j) : |a_ij| >= theta * sqrt(a_ii a_jj)}, diagonal
// excluded; edge weights are the normalized strengths.
fn strength_graph(a: &SparseMatrix, theta: f64) -> Vec<Vec<(usize, f64)>> {
    let n = a.nrows();
    let diag = a.diag();
    let mut graph = vec![Vec::new(); n];
    for (i, neighbors) in graph.iter_mut().enumerate() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j == i {
                continue;
            }
            let dd = diag[i] * diag[j];
            if dd <= 0.0 {
                continue;
            }
            let s = v.abs() / dd.sqrt();
            if s >= theta {
                neighbors.push((j, s));
            }
        }
    }
    graph
}

fn aggregate_on_graph(n: usize, graph: &[Vec<(usize, f64)>]) -> Aggregation {
    let mut assignment = vec![UNASSIGNED; n];
    let mut n_aggregates = 0usize;

    // Pass 1: seed an aggregate from every node whose closed strong
    // neighborhood is still fully unassigned, in ascending index order.
    for i in 0..n {
        if assignment[i] != UNASSIGNED {
            continue;
        }
        if graph[i].iter().any(|&(j, _)| assignment[j] != UNASSIGNED) {
            continue;
        }
        assignment[i] = n_aggregates;
        for &(j, _) in &graph[i] {
            assignment[j] = n_aggregates;
        }
        n_aggregates += 1;
    }

    // Pass 2: attach leftovers to the strongest neighboring aggregate
    // from pass 1, ties broken by the lowest aggregate id.
    let snapshot = assignment.clone();
    for i in 0..n {
        if assignment[i] != UNASSIGNED {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &(j, s) in &graph[i] {
            let agg = snapshot[j];
            if agg == UNASSIGNED {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, ba)) => s > bs || (s == bs && agg < ba),
            };
            if better {
                best = Some((s, agg));
            }
        }
        if let Some((_, agg)) = best {
            assignment[i] = agg;
        }
    }

    // Anything still unattached (isolated from every pass-1 aggregate)
    // becomes its own aggregate.
    for slot in assignment.iter_mut() {
        if *slot == UNASSIGNED {
            *slot = n_aggregates;
            n_aggregates += 1;
        }
    }

    Aggregation {
        n_fine: n,
        n_aggregates,
        assignment,
    }
}

/// Greedy standard aggregation on the strength graph of `a`.
pub fn aggregate(a: &SparseMatrix, theta: f64) -> Result<Aggregation> {
    if a.nrows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    assert_eq!(a.nrows(), a.ncols(), "aggregation needs a square matrix");
    let graph = strength_graph(a, theta);
    Ok(aggregate_on_graph(a.nrows(), &graph))
}

/// Aggressive variant: aggregation on the squared strength graph, whose
/// edges join nodes at distance up to two in the strength graph of `a`.
/// Neighborhoods grow to distance-2 balls and the coarse space comes out
/// far smaller than with standard aggregation.
pub fn aggregate_aggressive(a: &SparseMatrix, theta: f64) -> Result<Aggregation> {
    if a.nrows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let graph = strength_graph(a, theta);
    let n = a.nrows();
    let mut squared: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut reach: alloc::collections::BTreeMap<usize, f64> = alloc::collections::BTreeMap::new();
        for &(j, s) in &graph[i] {
            reach.entry(j).and_modify(|v| *v = FloatExt::max(*v, s)).or_insert(s);
            for &(k, s2) in &graph[j] {
                if k == i {
                    continue;
                }
                let through = FloatExt::min(s, s2);
                reach
                    .entry(k)
                    .and_modify(|v| *v = FloatExt::max(*v, through))
                    .or_insert(through);
            }
        }
        squared[i] = reach.into_iter().collect();
    }
    Ok(aggregate_on_graph(n, &squared))
}

/// Tentative piecewise-constant prolongator: the 0/1 aggregate indicator.
pub fn tentative_prolongator(agg: &Aggregation) -> SparseMatrix {
    let triplets = agg
        .assignment
        .iter()
        .enumerate()
        .map(|(i, &g)| (i, g, 1.0))
        .collect();
    SparseMatrix::from_triplets(agg.n_fine, agg.n_aggregates, triplets)
}

/// Smoothed-aggregation prolongator `(I - omega D^{-1} A) P_tent` with
/// `omega = omega_factor / lambda_max(D^{-1} A)`. `omega_factor = 0`
/// returns the tentative prolongator unchanged.
pub fn smoothed_prolongator(
    a: &SparseMatrix,
    agg: &Aggregation,
    omega_factor: f64,
) -> Result<SparseMatrix> {
    assert_eq!(a.nrows(), agg.n_fine, "aggregation size mismatch");
    let p_tent = tentative_prolongator(agg);
    if omega_factor == 0.0 {
        return Ok(p_tent);
    }
    let lambda = power_lambda_max_dinv_a(a, 1e-8, 1000)?;
    let omega = omega_factor / lambda;
    let diag = a.diag();
    let n = a.nrows();
    let mut triplets = Vec::with_capacity(a.nnz() + n);
    for i in 0..n {
        triplets.push((i, i, 1.0));
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            triplets.push((i, j, -omega * v / diag[i]));
        }
    }
    let smoother = SparseMatrix::from_triplets(n, n, triplets);
    Ok(smoother.matmul(&p_tent))
}

/// Q1 interpolation matrix from a coarse structured mesh into its uniform
/// refinement; `Space::State` restricts rows and columns to the interior
/// dofs of the respective problems.
pub fn geometric_prolongator(
    fine: &FeProblem,
    coarse: &FeProblem,
    space: Space,
) -> Result<SparseMatrix> {
    let fm = fine.mesh();
    let cm = coarse.mesh();
    let dim = fm.dim();
    if cm.dim() != dim {
        return Err(Error::MeshesNotNested(format!(
            "dimension mismatch: {} vs {}",
            dim,
            cm.dim()
        )));
    }
    let n_f = cells_per_side(fm)?;
    let n_c = cells_per_side(cm)?;
    if n_f != 2 * n_c {
        return Err(Error::MeshesNotNested(format!(
            "fine grid has {n_f} cells per side, coarse has {n_c}"
        )));
    }

    // Coordinate lookup for coarse vertices, and the nestedness check:
    // every coarse vertex must coincide with a fine vertex.
    let mut coarse_at = alloc::collections::BTreeMap::new();
    for v in 0..cm.num_vertices() {
        coarse_at.insert(coord_key(dim, cm.vertex(v)), v);
    }
    let fine_coords: alloc::collections::BTreeSet<[i64; 3]> = (0..fm.num_vertices())
        .map(|v| coord_key(dim, fm.vertex(v)))
        .collect();
    for v in 0..cm.num_vertices() {
        if !fine_coords.contains(&coord_key(dim, cm.vertex(v))) {
            return Err(Error::MeshesNotNested(format!(
                "coarse vertex {v} has no fine counterpart"
            )));
        }
    }

    let h_c = 1.0 / n_c as f64;
    let mut triplets = Vec::new();
    let nv_f = fm.num_vertices();
    for vf in 0..nv_f {
        let x = fm.vertex(vf);
        // containing coarse cell and local coordinates within it
        let mut cell = [0usize; 3];
        let mut local = [0.0f64; 3];
        for a in 0..dim {
            let scaled = x[a] * n_c as f64;
            let mut c = scaled.floor() as isize;
            c = c.clamp(0, n_c as isize - 1);
            cell[a] = c as usize;
            local[a] = scaled - c as f64;
        }
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut xc = [0.0f64; 3];
            for a in 0..dim {
                let hi = corner_is_high(dim, corner, a);
                w *= if hi { local[a] } else { 1.0 - local[a] };
                xc[a] = (cell[a] + hi as usize) as f64 * h_c;
            }
            if w.abs() < 1e-12 {
                continue;
            }
            let vc = *coarse_at.get(&coord_key(dim, &xc[..dim])).ok_or_else(|| {
                Error::MeshesNotNested(format!("no coarse vertex at cell corner of fine {vf}"))
            })?;
            triplets.push((vf, vc, w));
        }
    }

    match space {
        Space::Control => Ok(SparseMatrix::from_triplets(
            nv_f,
            cm.num_vertices(),
            triplets,
        )),
        Space::State => {
            let restricted = triplets
                .into_iter()
                .filter_map(|(vf, vc, w)| {
                    let row = fine.state_dof(vf)?;
                    let col = coarse.state_dof(vc)?;
                    Some((row, col, w))
                })
                .collect();
            Ok(SparseMatrix::from_triplets(
                fine.num_state_dofs(),
                coarse.num_state_dofs(),
                restricted,
            ))
        }
    }
}

fn cells_per_side(m: &Mesh) -> Result<usize> {
    let ne = m.num_elements();
    let dim = m.dim();
    let mut n = 1usize;
    while n.pow(dim as u32) < ne {
        n += 1;
    }
    if n.pow(dim as u32) != ne || m.num_vertices() != (n + 1).pow(dim as u32) {
        return Err(Error::MeshesNotNested(String::from(
            "mesh is not a structured tensor grid",
        )));
    }
    Ok(n)
}

/// How coarse spaces are constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseningMode {
    /// Smoothed aggregation on the level matrices.
    Amg,
    /// Q1 interpolation between nested structured meshes.
    Geometric,
}

/// Knobs for hierarchy construction.
#[derive(Debug, Clone)]
pub struct HierarchyConfig {
    /// Coarsening mode.
    pub mode: CoarseningMode,
    /// Strength-of-connection threshold.
    pub theta: f64,
    /// Prolongator smoothing weight numerator; omega = factor / lambda_max.
    pub omega_factor: f64,
    /// Stop coarsening once the coarsest control space is smaller than
    /// this (it is then small enough for dense handling).
    pub coarse_cap: usize,
    /// Hard cap on the number of levels.
    pub max_levels: usize,
    /// Use the squared strength graph for the first coarsening.
    pub aggressive_first: bool,
}

impl HierarchyConfig {
    /// Defaults for a given dimension and mode: `theta` 0.08 in 2D and
    /// 0.05 in 3D, `omega_factor` 4/3, `coarse_cap` 2000, `max_levels` 10.
    ///
    /// The Q1 quad stencil puts every neighbor at a strength ratio of
    /// exactly 1/8; the Q1 hex stencil has zero face-neighbor entries and
    /// tops out at 1/16 (edge neighbors), so `theta` must sit below those
    /// values for any edge to count as strong.
    pub fn for_dim(dim: usize, mode: CoarseningMode) -> Self {
        Self {
            mode,
            theta: if dim == 3 { 0.05 } else { 0.08 },
            omega_factor: 4.0 / 3.0,
            coarse_cap: 2000,
            max_levels: 10,
            aggressive_first: false,
        }
    }
}

/// One rung of the hierarchy.
#[derive(Debug, Clone)]
pub struct Level {
    /// Stiffness matrix on the state space.
    pub a: SparseMatrix,
    /// State mass matrix.
    pub m_y: SparseMatrix,
    /// Control mass matrix.
    pub m_u: SparseMatrix,
    /// State-control coupling mass matrix.
    pub m_yu: SparseMatrix,
    /// State prolongator from the next-coarser level (absent on the
    /// coarsest).
    pub s: Option<SparseMatrix>,
    /// Control prolongator from the next-coarser level.
    pub p: Option<SparseMatrix>,
}

impl Level {
    /// State dofs at this level.
    pub fn state_size(&self) -> usize {
        self.a.nrows()
    }

    /// Control dofs at this level.
    pub fn control_size(&self) -> usize {
        self.m_u.nrows()
    }
}

/// Per-level sizes for reporting.
#[derive(Debug, Clone, Copy)]
pub struct LevelSummary {
    /// Level index, 0 finest.
    pub level: usize,
    /// State dofs.
    pub state_dofs: usize,
    /// Control dofs.
    pub control_dofs: usize,
    /// Stored entries of the stiffness matrix.
    pub a_nnz: usize,
}

/// An ordered list of levels, index 0 finest.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    /// Levels, finest first.
    pub levels: Vec<Level>,
    /// Configuration the hierarchy was built with.
    pub config: HierarchyConfig,
    /// Set when coarsening stalled (a level failed to shrink) and the
    /// hierarchy stopped early.
    pub stagnated: bool,
}

impl Hierarchy {
    /// Number of levels.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Coarsening mode used.
    pub fn mode(&self) -> CoarseningMode {
        self.config.mode
    }

    /// Level `j`.
    pub fn level(&self, j: usize) -> &Level {
        &self.levels[j]
    }

    /// Per-level size summary.
    pub fn summary(&self) -> Vec<LevelSummary> {
        self.levels
            .iter()
            .enumerate()
            .map(|(j, l)| LevelSummary {
                level: j,
                state_dofs: l.state_size(),
                control_dofs: l.control_size(),
                a_nnz: l.a.nnz(),
            })
            .collect()
    }

    /// Recomputes every Galerkin coarse matrix from the stored transfers
    /// and compares entrywise, relative to the largest entry.
    pub fn verify_galerkin(&self, tol: f64) -> Result<()> {
        for j in 0..self.levels.len().saturating_sub(1) {
            let fine = &self.levels[j];
            let coarse = &self.levels[j + 1];
            let s = fine.s.as_ref().expect("transfer present below coarsest");
            let p = fine.p.as_ref().expect("transfer present below coarsest");
            let st = s.transpose();
            let pt = p.transpose();
            let checks = [
                ("A", SparseMatrix::triple_product(&st, &fine.a, s), &coarse.a),
                ("M_y", SparseMatrix::triple_product(&st, &fine.m_y, s), &coarse.m_y),
                ("M_u", SparseMatrix::triple_product(&pt, &fine.m_u, p), &coarse.m_u),
                ("M_yu", SparseMatrix::triple_product(&st, &fine.m_yu, p), &coarse.m_yu),
            ];
            for (name, recomputed, stored) in checks {
                let scale = max_abs(stored).max(1e-300);
                let diff = max_diff(&recomputed, stored);
                if diff > tol * scale {
                    return Err(Error::InvalidArg(format!(
                        "Galerkin identity for {name} fails at level {j}: {diff:.3e} vs scale {scale:.3e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn max_abs(a: &SparseMatrix) -> f64 {
    let mut m = 0.0f64;
    for i in 0..a.nrows() {
        let (_, vals) = a.row(i);
        for &v in vals {
            m = FloatExt::max(m, v.abs());
        }
    }
    m
}

fn max_diff(a: &SparseMatrix, b: &SparseMatrix) -> f64 {
    let mut m = 0.0f64;
    for i in 0..a.nrows() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            m = FloatExt::max(m, (v - b.get(i, j)).abs());
        }
        let (cols_b, vals_b) = b.row(i);
        for (&j, &v) in cols_b.iter().zip(vals_b) {
            m = FloatExt::max(m, (v - a.get(i, j)).abs());
        }
    }
    m
}

/// Builds a hierarchy over the given fine problem.
///
/// The fine matrices are assembled here; coarser levels are Galerkin
/// products. Construction stops at `max_levels`, when the coarsest
/// control space drops below `coarse_cap`, when coarsening stalls, or —
/// in geometric mode — when the cell count stops being divisible by two
/// or the coarse state space would be empty.
pub fn build_hierarchy(
    fe: &FeProblem,
    kappa: &Coefficient,
    config: &HierarchyConfig,
) -> Result<Hierarchy> {
    let fine = Level {
        a: assemble_stiffness(fe, kappa)?,
        m_y: assemble_mass(fe, Space::State, Space::State),
        m_u: assemble_mass(fe, Space::Control, Space::Control),
        m_yu: assemble_mass(fe, Space::State, Space::Control),
        s: None,
        p: None,
    };
    match config.mode {
        CoarseningMode::Geometric => build_geometric(fe, fine, config),
        CoarseningMode::Amg => {
            // auxiliary control-space operator: same stiffness, no
            // Dirichlet elimination
            let fe_ctl = FeProblem::new(fe.mesh().clone(), 0);
            let a_ctl = assemble_stiffness(&fe_ctl, kappa)?;
            build_amg(fine, a_ctl, config)
        }
    }
}

fn galerkin_level(fine: &Level, s: SparseMatrix, p: SparseMatrix) -> (Level, Level) {
    let st = s.transpose();
    let pt = p.transpose();
    let coarse = Level {
        a: SparseMatrix::triple_product(&st, &fine.a, &s),
        m_y: SparseMatrix::triple_product(&st, &fine.m_y, &s),
        m_u: SparseMatrix::triple_product(&pt, &fine.m_u, &p),
        m_yu: SparseMatrix::triple_product(&st, &fine.m_yu, &p),
        s: None,
        p: None,
    };
    let mut fine_with_transfers = fine.clone();
    fine_with_transfers.s = Some(s);
    fine_with_transfers.p = Some(p);
    (fine_with_transfers, coarse)
}

fn build_geometric(fe: &FeProblem, fine: Level, config: &HierarchyConfig) -> Result<Hierarchy> {
    let dim = fe.mesh().dim();
    let mut n = cells_per_side(fe.mesh())?;
    let mut levels: Vec<Level> = Vec::new();
    let mut current = fine;
    let mut current_fe = fe.clone();

    while levels.len() + 1 < config.max_levels
        && current.control_size() >= config.coarse_cap
        && n % 2 == 0
    {
        let coarse_mesh = build_structured_mesh(dim, n / 2)?;
        let coarse_fe = FeProblem::new(coarse_mesh, fe.dirichlet_faces());
        if coarse_fe.num_state_dofs() == 0 {
            break;
        }
        let s = geometric_prolongator(&current_fe, &coarse_fe, Space::State)?;
        let p = geometric_prolongator(&current_fe, &coarse_fe, Space::Control)?;
        let (finished, coarse) = galerkin_level(&current, s, p);
        levels.push(finished);
        current = coarse;
        current_fe = coarse_fe;
        n /= 2;
    }
    levels.push(current);
    Ok(Hierarchy {
        levels,
        config: config.clone(),
        stagnated: false,
    })
}

fn build_amg(fine: Level, a_ctl_fine: SparseMatrix, config: &HierarchyConfig) -> Result<Hierarchy> {
    let mut levels: Vec<Level> = Vec::new();
    let mut current = fine;
    let mut a_ctl = a_ctl_fine;
    let mut stagnated = false;

    while levels.len() + 1 < config.max_levels && current.control_size() >= config.coarse_cap {
        let first = levels.is_empty();
        let aggressive = config.aggressive_first && first;
        let agg_state = if aggressive {
            aggregate_aggressive(&current.a, config.theta)?
        } else {
            aggregate(&current.a, config.theta)?
        };
        let agg_ctl = if aggressive {
            aggregate_aggressive(&a_ctl, config.theta)?
        } else {
            aggregate(&a_ctl, config.theta)?
        };
        if agg_state.n_aggregates >= current.state_size()
            || agg_ctl.n_aggregates >= current.control_size()
        {
            stagnated = true;
            break;
        }
        let s = smoothed_prolongator(&current.a, &agg_state, config.omega_factor)?;
        let p = smoothed_prolongator(&a_ctl, &agg_ctl, config.omega_factor)?;
        a_ctl = SparseMatrix::triple_product(&p.transpose(), &a_ctl, &p);
        let (finished, coarse) = galerkin_level(&current, s, p);
        levels.push(finished);
        current = coarse;
    }
    levels.push(current);
    Ok(Hierarchy {
        levels,
        config: config.clone(),
        stagnated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{sym_eigen, DenseMatrix};
    use crate::mesh::face;

    fn laplacian_1d(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn aggregate_1d_laplacian_hand_trace() {
        // Hand trace of the two-pass greedy scheme: node 0 seeds {0,1},
        // node 3 seeds {2,3,4}, node 6 seeds {5,6,7}, and the leftover 8
        // attaches to its only neighboring aggregate.
        let a = laplacian_1d(9);
        let agg = aggregate(&a, 0.25).unwrap();
        assert_eq!(agg.n_aggregates, 3);
        assert_eq!(agg.assignment, vec![0, 0, 1, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn aggregate_weak_connections_gives_singletons() {
        let a = laplacian_1d(7);
        // theta close to 1: |a_ij| = 1 < 0.9 * 2, no strong edges
        let agg = aggregate(&a, 0.9).unwrap();
        assert_eq!(agg.n_aggregates, 7);
    }

    #[test]
    fn aggregate_diagonal_matrix_gives_singletons() {
        let a = SparseMatrix::from_diag(&[1.0, 2.0, 3.0, 4.0]);
        let agg = aggregate(&a, 0.25).unwrap();
        assert_eq!(agg.n_aggregates, 4);
    }

    #[test]
    fn aggregate_rejects_empty() {
        let a = SparseMatrix::from_triplets(0, 0, Vec::new());
        assert!(matches!(aggregate(&a, 0.25), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn tentative_prolongator_columns_sum_to_aggregate_sizes() {
        let a = laplacian_1d(9);
        let agg = aggregate(&a, 0.25).unwrap();
        let p = smoothed_prolongator(&a, &agg, 0.0).unwrap();
        let ones = vec![1.0; 9];
        let sums = p.spmv_transpose(&ones);
        let mut counts = vec![0.0; agg.n_aggregates];
        for &g in &agg.assignment {
            counts[g] += 1.0;
        }
        assert_eq!(sums, counts);
    }

    #[test]
    fn smoothed_prolongator_matches_dense_formula() {
        let a = laplacian_1d(9);
        let agg = aggregate(&a, 0.25).unwrap();
        let p = smoothed_prolongator(&a, &agg, 4.0 / 3.0).unwrap();

        // dense oracle: lambda_max(D^{-1} A) from the dense symmetric
        // eigensolver on D^{-1/2} A D^{-1/2}
        let ad = DenseMatrix::from_sparse(&a);
        let mut sym = ad.clone();
        for i in 0..9 {
            for j in 0..9 {
                sym.set(i, j, ad.get(i, j) / (ad.get(i, i) * ad.get(j, j)).sqrt() * 2.0);
            }
        }
        // diag entries are 2, so D^{-1/2} A D^{-1/2} = A / 2
        let lam = sym_eigen(&ad.scale(0.5)).unwrap().values[8];
        let omega = (4.0 / 3.0) / lam;
        let p_tent = tentative_prolongator(&agg);
        for i in 0..9 {
            for g in 0..3 {
                let mut expect = p_tent.get(i, g);
                let (cols, vals) = a.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    expect -= omega * v / 2.0 * p_tent.get(j, g);
                }
                assert!(
                    (p.get(i, g) - expect).abs() < 1e-6,
                    "entry ({i},{g}): {} vs {}",
                    p.get(i, g),
                    expect
                );
            }
        }
    }

    fn quad_problems(n: usize, faces: u8) -> (FeProblem, FeProblem) {
        let fine = FeProblem::new(build_structured_mesh(2, 2 * n).unwrap(), faces);
        let coarse = FeProblem::new(build_structured_mesh(2, n).unwrap(), faces);
        (fine, coarse)
    }

    #[test]
    fn geometric_prolongator_control_rows() {
        let (fine, coarse) = quad_problems(2, face::all(2));
        let p = geometric_prolongator(&fine, &coarse, Space::Control).unwrap();
        assert_eq!((p.nrows(), p.ncols()), (25, 9));
        // every fine row is a partition of unity
        let sums = p.spmv(&vec![1.0; 9]);
        for (i, s) in sums.iter().enumerate() {
            assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
        }
        // coarse vertices map to themselves with weight one
        let mut unit_rows = 0;
        for i in 0..25 {
            let (cols, vals) = p.row(i);
            if cols.len() == 1 && (vals[0] - 1.0).abs() < 1e-12 {
                unit_rows += 1;
            }
        }
        assert_eq!(unit_rows, 9);
        // an edge-midpoint row interpolates its two edge ends: (1/2, 1/2)
        let mut halves = 0;
        for i in 0..25 {
            let (_, vals) = p.row(i);
            if vals.len() == 2 && vals.iter().all(|v| (v - 0.5).abs() < 1e-12) {
                halves += 1;
            }
        }
        assert!(halves > 0);
    }

    #[test]
    fn geometric_prolongator_state_restriction() {
        let (fine, coarse) = quad_problems(2, face::all(2));
        let s = geometric_prolongator(&fine, &coarse, Space::State).unwrap();
        assert_eq!((s.nrows(), s.ncols()), (9, 1));
        // prolongated coarse constants are 1 away from the boundary; the
        // center fine vertex coincides with the single coarse interior dof
        let v = s.spmv(&[1.0]);
        let center = fine.state_dof(12).unwrap(); // vertex (0.5, 0.5) of the 5x5 grid
        assert!((v[center] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_prolongator_rejects_non_nested() {
        let a = FeProblem::new(build_structured_mesh(2, 6).unwrap(), 0);
        let b = FeProblem::new(build_structured_mesh(2, 4).unwrap(), 0);
        assert!(matches!(
            geometric_prolongator(&a, &b, Space::Control),
            Err(Error::MeshesNotNested(_))
        ));
    }

    #[test]
    fn geometric_galerkin_matches_direct_coarse_assembly() {
        // nested Q1 spaces with constant kappa: S^T A S equals the
        // directly assembled coarse stiffness
        let fe = FeProblem::new(build_structured_mesh(2, 4).unwrap(), face::all(2));
        let config = HierarchyConfig {
            coarse_cap: 1,
            max_levels: 2,
            ..HierarchyConfig::for_dim(2, CoarseningMode::Geometric)
        };
        let h = build_hierarchy(&fe, &Coefficient::one(), &config).unwrap();
        assert_eq!(h.num_levels(), 2);
        let coarse_fe = FeProblem::new(build_structured_mesh(2, 2).unwrap(), face::all(2));
        let a_direct = assemble_stiffness(&coarse_fe, &Coefficient::one()).unwrap();
        let a_galerkin = &h.level(1).a;
        assert_eq!(a_direct.nrows(), a_galerkin.nrows());
        for i in 0..a_direct.nrows() {
            for j in 0..a_direct.ncols() {
                assert!(
                    (a_direct.get(i, j) - a_galerkin.get(i, j)).abs() < 1e-12,
                    "entry ({i},{j})"
                );
            }
        }
        h.verify_galerkin(1e-12).unwrap();
    }

    #[test]
    fn single_level_config_yields_fine_only() {
        let fe = FeProblem::new(build_structured_mesh(2, 4).unwrap(), face::all(2));
        let config = HierarchyConfig {
            max_levels: 1,
            coarse_cap: 1,
            ..HierarchyConfig::for_dim(2, CoarseningMode::Geometric)
        };
        let h = build_hierarchy(&fe, &Coefficient::one(), &config).unwrap();
        assert_eq!(h.num_levels(), 1);
        assert!(h.level(0).s.is_none());
    }

    #[test]
    fn amg_hierarchy_on_2d_poisson_coarsens_fast() {
        let fe = FeProblem::new(build_structured_mesh(2, 32).unwrap(), face::all(2));
        let config = HierarchyConfig {
            coarse_cap: 20,
            ..HierarchyConfig::for_dim(2, CoarseningMode::Amg)
        };
        let h = build_hierarchy(&fe, &Coefficient::one(), &config).unwrap();
        assert!(h.num_levels() >= 3, "levels: {}", h.num_levels());
        assert!(!h.stagnated);
        let sizes: Vec<usize> = h.summary().iter().map(|s| s.control_dofs).collect();
        for w in sizes.windows(2) {
            assert!(w[1] < w[0], "sizes not strictly decreasing: {sizes:?}");
            let ratio = w[1] as f64 / w[0] as f64;
            assert!(ratio <= 0.6, "coarsening ratio {ratio} in {sizes:?}");
        }
        h.verify_galerkin(1e-12).unwrap();
    }

    #[test]
    fn amg_prolongators_have_full_column_rank() {
        let fe = FeProblem::new(build_structured_mesh(2, 8).unwrap(), face::all(2));
        let config = HierarchyConfig {
            coarse_cap: 4,
            ..HierarchyConfig::for_dim(2, CoarseningMode::Amg)
        };
        let h = build_hierarchy(&fe, &Coefficient::one(), &config).unwrap();
        for level in &h.levels {
            if let Some(p) = &level.p {
                let ptp = DenseMatrix::from_sparse(&p.transpose().matmul(p));
                let eig = sym_eigen(&ptp).unwrap();
                assert!(eig.values[0] > 1e-12, "rank-deficient prolongator");
            }
        }
    }

    #[test]
    fn stalled_coarsening_stops_with_warning() {
        // theta close to 1 leaves no strong edges, so aggregation yields
        // singletons and the hierarchy cannot shrink
        let fe = FeProblem::new(build_structured_mesh(2, 4).unwrap(), face::all(2));
        let config = HierarchyConfig {
            theta: 0.9,
            coarse_cap: 1,
            ..HierarchyConfig::for_dim(2, CoarseningMode::Amg)
        };
        let h = build_hierarchy(&fe, &Coefficient::one(), &config).unwrap();
        assert!(h.stagnated);
        assert_eq!(h.num_levels(), 1);
    }

    #[test]
    fn aggressive_first_coarsening_shrinks_harder() {
        let fe = FeProblem::new(build_structured_mesh(2, 16).unwrap(), face::all(2));
        let base = HierarchyConfig {
            coarse_cap: 8,
            ..HierarchyConfig::for_dim(2, CoarseningMode::Amg)
        };
        let plain = build_hierarchy(&fe, &Coefficient::one(), &base).unwrap();
        let aggressive = build_hierarchy(
            &fe,
            &Coefficient::one(),
            &HierarchyConfig {
                aggressive_first: true,
                ..base
            },
        )
        .unwrap();
        assert!(
            aggressive.level(1).control_size() < plain.level(1).control_size(),
            "aggressive {} vs plain {}",
            aggressive.level(1).control_size(),
            plain.level(1).control_size()
        );
    }
}
