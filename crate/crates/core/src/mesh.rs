//! Structured quadrilateral and hexahedral meshes of the unit box, with
//! uniform refinement.
//!
//! Meshes are immutable after construction. Only axis-aligned box cells
//! are supported: that is all the structured experiments need, and it
//! keeps geometric coarsening well-defined.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float::FloatExt;

/// Face tags for the boundary of `[0,1]^d`.
pub mod face {
    /// x = 0 face.
    pub const X0: u8 = 1 << 0;
    /// x = 1 face.
    pub const X1: u8 = 1 << 1;
    /// y = 0 face.
    pub const Y0: u8 = 1 << 2;
    /// y = 1 face.
    pub const Y1: u8 = 1 << 3;
    /// z = 0 face.
    pub const Z0: u8 = 1 << 4;
    /// z = 1 face.
    pub const Z1: u8 = 1 << 5;

    /// All faces of the d-dimensional unit box.
    pub fn all(dim: usize) -> u8 {
        match dim {
            2 => X0 | X1 | Y0 | Y1,
            _ => X0 | X1 | Y0 | Y1 | Z0 | Z1,
        }
    }

    /// Face names in tag order, for printing and parsing.
    pub const NAMES: [(&str, u8); 6] = [
        ("x0", X0),
        ("x1", X1),
        ("y0", Y0),
        ("y1", Y1),
        ("z0", Z0),
        ("z1", Z1),
    ];
}

const BOUNDARY_TOL: f64 = 1e-12;

/// A structured mesh of `[0,1]^d`: quads for d = 2, hexes for d = 3.
///
/// Vertices are stored flat (`dim` coordinates each); elements store
/// `2^dim` vertex indices in counterclockwise order for quads, and
/// bottom-face-then-top-face counterclockwise order for hexes. Every
/// vertex carries a bitmask of the boundary faces it lies on.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<f64>,
    elements: Vec<usize>,
    boundary: Vec<u8>,
}

impl Mesh {
    /// Assembles a mesh from raw parts, validating indices, boundary tags
    /// and the axis-aligned box shape of every element.
    pub fn from_parts(
        dim: usize,
        vertices: Vec<f64>,
        elements: Vec<usize>,
        boundary: Vec<u8>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::BadDimension(dim));
        }
        if vertices.len() % dim != 0 {
            return Err(Error::InvalidMesh(format!(
                "vertex array length {} not divisible by dim {dim}",
                vertices.len()
            )));
        }
        let nv = vertices.len() / dim;
        let npe = 1usize << dim;
        if elements.len() % npe != 0 {
            return Err(Error::InvalidMesh(format!(
                "element array length {} not divisible by {npe}",
                elements.len()
            )));
        }
        if boundary.len() != nv {
            return Err(Error::InvalidMesh(format!(
                "boundary tag count {} does not match vertex count {nv}",
                boundary.len()
            )));
        }
        let mesh = Self {
            dim,
            vertices,
            elements,
            boundary,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        let nv = self.num_vertices();
        for (e, conn) in self.elements.chunks(self.nodes_per_element()).enumerate() {
            for &v in conn {
                if v >= nv {
                    return Err(Error::InvalidMesh(format!(
                        "element {e} references vertex {v} out of {nv}"
                    )));
                }
            }
            let mut sorted = conn.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != conn.len() {
                return Err(Error::InvalidMesh(format!(
                    "element {e} has repeated vertices"
                )));
            }
            self.element_box(e)?;
        }
        for v in 0..nv {
            let expected = boundary_mask(self.dim, self.vertex(v));
            if expected != self.boundary[v] {
                return Err(Error::InvalidMesh(format!(
                    "vertex {v} boundary tag {:#04x} does not match coordinates ({:#04x} expected)",
                    self.boundary[v], expected
                )));
            }
        }
        Ok(())
    }

    /// Corner bounds `(lo, hi)` of an element, erroring on degenerate or
    /// non-box connectivity (this doubles as the positive-Jacobian check).
    pub(crate) fn element_box(&self, e: usize) -> Result<([f64; 3], [f64; 3])> {
        let conn = self.element(e);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &v in conn {
            for (a, &c) in self.vertex(v).iter().enumerate() {
                lo[a] = FloatExt::min(lo[a], c);
                hi[a] = FloatExt::max(hi[a], c);
            }
        }
        for a in 0..self.dim {
            if !(hi[a] > lo[a]) {
                return Err(Error::InvalidMesh(format!("element {e} is degenerate")));
            }
        }
        // Corner k of the reference ordering must sit at the matching box
        // corner, which also pins the orientation (positive Jacobian).
        for (k, &v) in conn.iter().enumerate() {
            let x = self.vertex(v);
            for a in 0..self.dim {
                let expect = if corner_is_high(self.dim, k, a) {
                    hi[a]
                } else {
                    lo[a]
                };
                if x[a] != expect {
                    return Err(Error::InvalidMesh(format!(
                        "element {e} is not an axis-aligned box in reference order"
                    )));
                }
            }
        }
        Ok((lo, hi))
    }

    /// Spatial dimension (2 or 3).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vertices per element: 4 for quads, 8 for hexes.
    pub fn nodes_per_element(&self) -> usize {
        1 << self.dim
    }

    /// Number of vertices.
    pub fn num_vertices(&self) -> usize {
        self.vertices.len() / self.dim
    }

    /// Number of elements.
    pub fn num_elements(&self) -> usize {
        self.elements.len() / self.nodes_per_element()
    }

    /// Coordinates of vertex `v`.
    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.vertices[v * self.dim..(v + 1) * self.dim]
    }

    /// Vertex indices of element `e`.
    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.nodes_per_element();
        &self.elements[e * npe..(e + 1) * npe]
    }

    /// Boundary-face bitmask of vertex `v` (zero for interior vertices).
    pub fn boundary_mask(&self, v: usize) -> u8 {
        self.boundary[v]
    }

    /// True when vertex `v` lies on any of the faces in `faces`.
    pub fn on_faces(&self, v: usize, faces: u8) -> bool {
        self.boundary[v] & faces != 0
    }

    /// Number of vertices with a nonzero boundary tag.
    pub fn num_boundary_vertices(&self) -> usize {
        self.boundary.iter().filter(|&&m| m != 0).count()
    }

    /// Sum of element volumes.
    pub fn volume(&self) -> f64 {
        let mut total = 0.0;
        for e in 0..self.num_elements() {
            let (lo, hi) = self.element_box(e).expect("validated at construction");
            let mut v = 1.0;
            for a in 0..self.dim {
                v *= hi[a] - lo[a];
            }
            total += v;
        }
        total
    }
}

// Reference orderings: quad (0,0),(1,0),(1,1),(0,1); hex adds the top face
// in the same rotation.
pub(crate) fn corner_is_high(dim: usize, k: usize, axis: usize) -> bool {
    let quad = [(false, false), (true, false), (true, true), (false, true)];
    match dim {
        2 => {
            let (x, y) = quad[k];
            [x, y][axis]
        }
        _ => {
            let (x, y) = quad[k % 4];
            [x, y, k >= 4][axis]
        }
    }
}

fn boundary_mask(dim: usize, x: &[f64]) -> u8 {
    let mut mask = 0u8;
    for a in 0..dim {
        if x[a].abs() <= BOUNDARY_TOL {
            mask |= face::NAMES[2 * a].1;
        }
        if (x[a] - 1.0).abs() <= BOUNDARY_TOL {
            mask |= face::NAMES[2 * a + 1].1;
        }
    }
    mask
}

/// Builds the tensor-product grid of `cells_per_side^dim` cells on
/// `[0,1]^dim`. Vertices are ordered lexicographically with x fastest.
pub fn build_structured_mesh(dim: usize, cells_per_side: usize) -> Result<Mesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::BadDimension(dim));
    }
    if cells_per_side < 1 {
        return Err(Error::BadCellCount(cells_per_side));
    }
    let n = cells_per_side;
    let np = n + 1;
    let h = 1.0 / n as f64;

    let mut vertices = Vec::new();
    let mut boundary = Vec::new();
    let kmax = if dim == 3 { np } else { 1 };
    for k in 0..kmax {
        for j in 0..np {
            for i in 0..np {
                let x = [i as f64 * h, j as f64 * h, k as f64 * h];
                vertices.extend_from_slice(&x[..dim]);
                boundary.push(boundary_mask(dim, &x[..dim]));
            }
        }
    }

    let vid = |i: usize, j: usize, k: usize| -> usize { i + np * (j + np * k) };
    let mut elements = Vec::new();
    let ke = if dim == 3 { n } else { 1 };
    for k in 0..ke {
        for j in 0..n {
            for i in 0..n {
                elements.extend_from_slice(&[
                    vid(i, j, k),
                    vid(i + 1, j, k),
                    vid(i + 1, j + 1, k),
                    vid(i, j + 1, k),
                ]);
                if dim == 3 {
                    elements.extend_from_slice(&[
                        vid(i, j, k + 1),
                        vid(i + 1, j, k + 1),
                        vid(i + 1, j + 1, k + 1),
                        vid(i, j + 1, k + 1),
                    ]);
                }
            }
        }
    }

    Mesh::from_parts(dim, vertices, elements, boundary)
}

/// Splits every quad into 4 quads (hex into 8 hexes) by edge, face and
/// center midpoints. Original vertices keep their indices.
pub fn refine_uniform(m: &Mesh) -> Result<Mesh> {
    let dim = m.dim();
    let mut vertices = m.vertices.clone();
    let mut boundary = m.boundary.clone();
    // Midpoints are keyed by coordinate bits: shared points of adjacent
    // elements are computed from the same endpoint values per axis, so
    // the bits agree.
    let mut seen: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    for v in 0..m.num_vertices() {
        seen.insert(coord_key(dim, m.vertex(v)), v);
    }

    let mut vertex_at = |coords: &[f64], vertices: &mut Vec<f64>, boundary: &mut Vec<u8>| {
        let key = coord_key(dim, coords);
        *seen.entry(key).or_insert_with(|| {
            let id = vertices.len() / dim;
            vertices.extend_from_slice(coords);
            boundary.push(boundary_mask(dim, coords));
            id
        })
    };

    let mut elements = Vec::new();
    for e in 0..m.num_elements() {
        let (lo, hi) = m.element_box(e)?;
        let mid = [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ];
        let nsub = 1usize << dim;
        for sub in 0..nsub {
            // Sub-box `sub` spans [lo,mid] or [mid,hi] per axis.
            let (mut slo, mut shi) = ([0.0f64; 3], [0.0f64; 3]);
            for a in 0..dim {
                if sub >> a & 1 == 0 {
                    slo[a] = lo[a];
                    shi[a] = mid[a];
                } else {
                    slo[a] = mid[a];
                    shi[a] = hi[a];
                }
            }
            for corner in 0..nsub {
                let mut x = [0.0f64; 3];
                for a in 0..dim {
                    x[a] = if corner_is_high(dim, corner, a) {
                        shi[a]
                    } else {
                        slo[a]
                    };
                }
                let id = vertex_at(&x[..dim], &mut vertices, &mut boundary);
                elements.push(id);
            }
        }
    }

    Mesh::from_parts(dim, vertices, elements, boundary)
}

// Coordinates quantized at 2^-40: grid points of any mesh handled here are
// separated by far more, and points computed along different floating
// point routes (refinement midpoints vs direct construction) agree to far
// better, so the key is stable.
pub(crate) fn coord_key(dim: usize, x: &[f64]) -> [i64; 3] {
    let mut key = [0i64; 3];
    let scale = (1u64 << 40) as f64;
    for a in 0..dim {
        key[a] = libm::round(x[a] * scale) as i64;
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_2d() {
        let m = build_structured_mesh(2, 1).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_elements(), 1);
        assert_eq!(m.num_boundary_vertices(), 4);
    }

    #[test]
    fn four_cells_2d_counts() {
        let m = build_structured_mesh(2, 4).unwrap();
        assert_eq!(m.num_vertices(), 25);
        assert_eq!(m.num_elements(), 16);
    }

    #[test]
    fn two_cells_3d_counts_and_boundary() {
        let m = build_structured_mesh(3, 2).unwrap();
        assert_eq!(m.num_vertices(), 27);
        assert_eq!(m.num_elements(), 8);
        // only the center vertex is interior
        assert_eq!(m.num_boundary_vertices(), 26);
        let interior: Vec<usize> = (0..27).filter(|&v| m.boundary_mask(v) == 0).collect();
        assert_eq!(interior.len(), 1);
        let c = m.vertex(interior[0]);
        assert!(c.iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_dimension_and_cell_count() {
        assert!(matches!(build_structured_mesh(1, 4), Err(Error::BadDimension(1))));
        assert!(matches!(build_structured_mesh(4, 4), Err(Error::BadDimension(4))));
        assert!(matches!(build_structured_mesh(2, 0), Err(Error::BadCellCount(0))));
    }

    #[test]
    fn refine_single_quad() {
        let m = build_structured_mesh(2, 1).unwrap();
        let r = refine_uniform(&m).unwrap();
        assert_eq!(r.num_elements(), 4);
        assert_eq!(r.num_vertices(), 9);
    }

    #[test]
    fn refine_3d_eight_cells() {
        let m = build_structured_mesh(3, 2).unwrap();
        let r = refine_uniform(&m).unwrap();
        assert_eq!(r.num_elements(), 64);
        assert_eq!(r.num_vertices(), 125);
    }

    #[test]
    fn refine_preserves_original_vertices() {
        let m = build_structured_mesh(2, 3).unwrap();
        let r = refine_uniform(&m).unwrap();
        for v in 0..m.num_vertices() {
            assert_eq!(m.vertex(v), r.vertex(v));
        }
    }

    fn coordinate_set(m: &Mesh) -> alloc::collections::BTreeSet<[i64; 3]> {
        (0..m.num_vertices())
            .map(|v| coord_key(m.dim(), m.vertex(v)))
            .collect()
    }

    #[test]
    fn refining_twice_matches_direct_build() {
        // n = 3 exercises non-dyadic coordinates, where midpoint and
        // direct-construction arithmetic differ in the last bits
        for (dim, n) in [(2usize, 2usize), (2, 3), (3, 2), (3, 3)] {
            let m = build_structured_mesh(dim, n).unwrap();
            let rr = refine_uniform(&refine_uniform(&m).unwrap()).unwrap();
            let direct = build_structured_mesh(dim, 4 * n).unwrap();
            assert_eq!(rr.num_vertices(), direct.num_vertices());
            assert_eq!(rr.num_elements(), direct.num_elements());
            assert_eq!(coordinate_set(&rr), coordinate_set(&direct));
        }
    }

    #[test]
    fn refinement_preserves_domain_volume() {
        for dim in [2usize, 3] {
            let mut m = build_structured_mesh(dim, 3).unwrap();
            for _ in 0..2 {
                m = refine_uniform(&m).unwrap();
                assert!((m.volume() - 1.0).abs() < 1e-12);
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn structured_counts_follow_closed_forms(n in 1usize..=32, dim in 2usize..=3) {
            // keep 3D sizes moderate
            let n = if dim == 3 { n.min(12) } else { n };
            let m = build_structured_mesh(dim, n).unwrap();
            proptest::prop_assert_eq!(m.num_vertices(), (n + 1).pow(dim as u32));
            proptest::prop_assert_eq!(m.num_elements(), n.pow(dim as u32));
            proptest::prop_assert!((m.volume() - 1.0).abs() < 1e-12);
        }
    }
}
