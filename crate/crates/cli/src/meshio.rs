//! Line-oriented plain-text mesh format.
//!
//! ```text
//! hessmg-mesh 1
//! dim 2
//! vertices 4
//! 0 0
//! 1 0
//! 0 1
//! 1 1
//! elements 1
//! 0 1 3 2
//! boundary 4
//! 0 x0,y0
//! 1 x1,y0
//! 2 x0,y1
//! 3 x1,y1
//! ```
//!
//! Coordinates are written with the shortest representation that parses
//! back to the same `f64`, so save/load round-trips are exact. The
//! `boundary` section lists only tagged vertices, each with its
//! comma-separated face names; tags are re-validated against the
//! coordinates on load.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hessmg_core::mesh::{face, Mesh};

const MAGIC: &str = "hessmg-mesh 1";

/// Serializes a mesh to the text format.
pub fn mesh_to_string(m: &Mesh) -> String {
    let dim = m.dim();
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("dim {dim}\n"));
    out.push_str(&format!("vertices {}\n", m.num_vertices()));
    for v in 0..m.num_vertices() {
        let coords: Vec<String> = m.vertex(v).iter().map(|c| format!("{c}")).collect();
        out.push_str(&coords.join(" "));
        out.push('\n');
    }
    out.push_str(&format!("elements {}\n", m.num_elements()));
    for e in 0..m.num_elements() {
        let conn: Vec<String> = m.element(e).iter().map(|i| format!("{i}")).collect();
        out.push_str(&conn.join(" "));
        out.push('\n');
    }
    let tagged: Vec<usize> = (0..m.num_vertices())
        .filter(|&v| m.boundary_mask(v) != 0)
        .collect();
    out.push_str(&format!("boundary {}\n", tagged.len()));
    for v in tagged {
        out.push_str(&format!("{v} {}\n", face_names(m.boundary_mask(v))));
    }
    out
}

/// Writes a mesh to `path`.
pub fn save_mesh(m: &Mesh, path: &Path) -> Result<()> {
    fs::write(path, mesh_to_string(m))
        .with_context(|| format!("writing mesh to {}", path.display()))
}

/// Reads a mesh from `path`.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading mesh from {}", path.display()))?;
    mesh_from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn face_names(mask: u8) -> String {
    face::NAMES
        .iter()
        .filter(|(_, bit)| mask & bit != 0)
        .map(|(name, _)| *name)
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses the text format; errors carry 1-based line numbers.
pub fn mesh_from_str(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().enumerate();

    let mut next_line = |what: &str| -> Result<(usize, &str)> {
        for (idx, raw) in lines.by_ref() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Ok((idx + 1, trimmed));
        }
        bail!("unexpected end of file while looking for {what}")
    };

    let (line_no, header) = next_line("the header")?;
    if header != MAGIC {
        bail!("line {line_no}: expected header '{MAGIC}', found '{header}'");
    }

    let dim = parse_counted(next_line("the dim line")?, "dim")?;
    let nv = parse_counted(next_line("the vertex count")?, "vertices")?;
    let mut vertices = Vec::with_capacity(nv * dim);
    for _ in 0..nv {
        let (line_no, line) = next_line("a vertex line")?;
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| anyhow!("line {line_no}: bad coordinate '{t}': {e}"))
            })
            .collect::<Result<_>>()?;
        if coords.len() != dim {
            bail!(
                "line {line_no}: expected {dim} coordinates, found {}",
                coords.len()
            );
        }
        vertices.extend_from_slice(&coords);
    }

    let ne = parse_counted(next_line("the element count")?, "elements")?;
    let npe = 1usize << dim;
    let mut elements = Vec::with_capacity(ne * npe);
    for _ in 0..ne {
        let (line_no, line) = next_line("an element line")?;
        let conn: Vec<usize> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| anyhow!("line {line_no}: bad vertex index '{t}': {e}"))
            })
            .collect::<Result<_>>()?;
        if conn.len() != npe {
            bail!(
                "line {line_no}: expected {npe} vertex indices, found {}",
                conn.len()
            );
        }
        for &v in &conn {
            if v >= nv {
                bail!("line {line_no}: element references vertex {v}, but only {nv} vertices exist");
            }
        }
        elements.extend_from_slice(&conn);
    }

    let nb = parse_counted(next_line("the boundary count")?, "boundary")?;
    let mut boundary = vec![0u8; nv];
    for _ in 0..nb {
        let (line_no, line) = next_line("a boundary line")?;
        let mut parts = line.split_whitespace();
        let v: usize = parts
            .next()
            .ok_or_else(|| anyhow!("line {line_no}: empty boundary line"))?
            .parse()
            .map_err(|e| anyhow!("line {line_no}: bad vertex index: {e}"))?;
        if v >= nv {
            bail!("line {line_no}: boundary tag references vertex {v}, but only {nv} vertices exist");
        }
        let tags = parts
            .next()
            .ok_or_else(|| anyhow!("line {line_no}: missing face tags"))?;
        let mut mask = 0u8;
        for tag in tags.split(',') {
            let bit = face::NAMES
                .iter()
                .find(|(name, _)| *name == tag)
                .map(|(_, bit)| *bit)
                .ok_or_else(|| anyhow!("line {line_no}: unknown face tag '{tag}'"))?;
            mask |= bit;
        }
        boundary[v] = mask;
    }

    Mesh::from_parts(dim, vertices, elements, boundary).map_err(|e| anyhow!("{e}"))
}

fn parse_counted((line_no, line): (usize, &str), key: &str) -> Result<usize> {
    let mut parts = line.split_whitespace();
    let found = parts
        .next()
        .ok_or_else(|| anyhow!("line {line_no}: expected '{key} <count>'"))?;
    if found != key {
        bail!("line {line_no}: expected '{key} <count>', found '{line}'");
    }
    parts
        .next()
        .ok_or_else(|| anyhow!("line {line_no}: missing count after '{key}'"))?
        .parse()
        .map_err(|e| anyhow!("line {line_no}: bad count: {e}"))
}
