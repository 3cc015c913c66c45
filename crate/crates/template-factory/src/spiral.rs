//! Deterministic spiral enumeration of mesh neighborhoods.

use std::collections::BTreeMap;

use mesh_core::TriMesh;

use crate::geodesic::adjacency;
use crate::{Result, TemplateError};

/// Enumerates a fixed-length spiral sequence around every vertex.
///
/// A spiral starts at its center vertex, walks the 1-ring counterclockwise
/// from the smallest-index neighbor, then visits the 1-rings of ring vertices
/// in order, skipping anything already collected. Sequences are truncated to
/// `kernel` entries and padded by repeating the final entry.
pub fn spiral_sequences(mesh: &TriMesh, kernel: usize) -> Result<Vec<Vec<usize>>> {
    if kernel == 0 {
        return Err(TemplateError::Invalid { what: "kernel", msg: "spiral length must be positive".into() });
    }
    let walker = Walker::build(mesh)?;
    let n = mesh.vertices.len();
    let mut stamp = vec![usize::MAX; n];
    let mut rows = Vec::with_capacity(n);
    for v in 0..n {
        rows.push(walker.spiral(v, kernel, &mut stamp)?);
    }
    Ok(rows)
}

struct Walker {
    /// Counterclockwise successor of each neighbor around a center vertex.
    succ: Vec<BTreeMap<usize, usize>>,
    pred: Vec<BTreeMap<usize, usize>>,
    neighbors: Vec<Vec<usize>>,
}

impl Walker {
    fn build(mesh: &TriMesh) -> Result<Walker> {
        let n = mesh.vertices.len();
        let mut succ = vec![BTreeMap::new(); n];
        let mut pred = vec![BTreeMap::new(); n];
        for face in &mesh.faces {
            for r in 0..3 {
                let (c, x, y) = (face[r], face[(r + 1) % 3], face[(r + 2) % 3]);
                if succ[c].insert(x, y).is_some() {
                    return Err(TemplateError::NonManifold {
                        vertex: c,
                        msg: format!("two faces share the directed edge {c} -> {x}"),
                    });
                }
                pred[c].insert(y, x);
            }
        }
        Ok(Walker { succ, pred, neighbors: adjacency(mesh) })
    }

    /// Ordered 1-ring of `v`, starting at its smallest-index neighbor.
    fn ring1(&self, v: usize) -> Result<Vec<usize>> {
        let nbrs = &self.neighbors[v];
        if nbrs.is_empty() {
            return Ok(Vec::new());
        }
        let start = nbrs[0];
        let mut out = vec![start];
        let mut cur = start;
        let mut closed = false;
        while let Some(&next) = self.succ[v].get(&cur) {
            if next == start {
                closed = true;
                break;
            }
            out.push(next);
            if out.len() > nbrs.len() {
                return Err(self.walk_error(v, out.len(), nbrs.len()));
            }
            cur = next;
        }
        if !closed {
            // The fan is open; pick up the remainder by walking backwards.
            cur = start;
            while let Some(&prev) = self.pred[v].get(&cur) {
                out.push(prev);
                if out.len() > nbrs.len() {
                    return Err(self.walk_error(v, out.len(), nbrs.len()));
                }
                cur = prev;
            }
        }
        if out.len() != nbrs.len() {
            return Err(self.walk_error(v, out.len(), nbrs.len()));
        }
        Ok(out)
    }

    fn walk_error(&self, v: usize, got: usize, want: usize) -> TemplateError {
        TemplateError::NonManifold { vertex: v, msg: format!("1-ring walk visited {got} of {want} neighbors") }
    }

    fn spiral(&self, v: usize, kernel: usize, stamp: &mut [usize]) -> Result<Vec<usize>> {
        let mut out = vec![v];
        stamp[v] = v;
        let mut ring = Vec::new();
        for w in self.ring1(v)? {
            stamp[w] = v;
            ring.push(w);
            out.push(w);
        }
        while out.len() < kernel && !ring.is_empty() {
            let mut next = Vec::new();
            for &u in &ring {
                for w in self.ring1(u)? {
                    if stamp[w] != v {
                        stamp[w] = v;
                        next.push(w);
                        out.push(w);
                    }
                }
            }
            ring = next;
        }
        out.truncate(kernel);
        let pad = *out.last().expect("spiral starts at its center");
        while out.len() < kernel {
            out.push(pad);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mesh_core::shapes::{icosphere, unit_grid, GridDiagonals};

    fn grid3x3() -> TriMesh {
        unit_grid(3, 3, GridDiagonals::Uniform)
    }

    #[test]
    fn matches_enumerated_grid_spirals() {
        let mesh = grid3x3();
        assert_eq!(spiral_sequences(&mesh, 7).unwrap()[4], vec![4, 0, 1, 5, 8, 7, 3]);
        assert_eq!(spiral_sequences(&mesh, 9).unwrap()[4], vec![4, 0, 1, 5, 8, 7, 3, 2, 6]);
        assert_eq!(spiral_sequences(&mesh, 4).unwrap()[0], vec![0, 1, 4, 3]);
        assert_eq!(spiral_sequences(&mesh, 9).unwrap()[0], vec![0, 1, 4, 3, 5, 2, 8, 7, 6]);
    }

    #[test]
    fn kernel_one_is_the_center_alone() {
        let mesh = grid3x3();
        let rows = spiral_sequences(&mesh, 1).unwrap();
        for (v, row) in rows.iter().enumerate() {
            assert_eq!(row, &vec![v]);
        }
    }

    #[test]
    fn exhausted_meshes_pad_with_the_last_vertex() {
        let mesh = grid3x3();
        let rows = spiral_sequences(&mesh, 12).unwrap();
        assert_eq!(rows[0], vec![0, 1, 4, 3, 5, 2, 8, 7, 6, 6, 6, 6]);
    }

    #[test]
    fn every_row_starts_at_its_center() {
        for mesh in [icosphere(1, 1.0), unit_grid(5, 4, GridDiagonals::Uniform)] {
            let rows = spiral_sequences(&mesh, 8).unwrap();
            assert_eq!(rows.len(), mesh.vertices.len());
            for (v, row) in rows.iter().enumerate() {
                assert_eq!(row.len(), 8);
                assert_eq!(row[0], v);
                assert!(row.iter().all(|&w| w < mesh.vertices.len()));
            }
        }
    }

    #[test]
    fn interior_spirals_have_distinct_entries() {
        let mesh = unit_grid(5, 5, GridDiagonals::Uniform);
        let rows = spiral_sequences(&mesh, 9).unwrap();
        let row = &rows[12];
        let mut unique = row.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 9);
    }

    #[test]
    fn closed_rings_walk_all_the_way_around() {
        let mesh = icosphere(1, 1.0);
        let rows = spiral_sequences(&mesh, 7).unwrap();
        // The twelve original icosahedron corners keep valence five.
        let row = &rows[0];
        assert_eq!(row[0], 0);
        let mut ring: Vec<usize> = row[1..6].to_vec();
        ring.sort_unstable();
        let mut expect: Vec<usize> = adjacency(&mesh)[0].clone();
        expect.sort_unstable();
        assert_eq!(ring, expect);
    }

    #[test]
    fn bowtie_vertex_is_rejected() {
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [-1.0, 0.0, 0.0],
            [-1.0, -1.0, 0.0],
        ];
        let mesh = TriMesh::new(vertices, vec![[0, 1, 2], [0, 3, 4]]).unwrap();
        match spiral_sequences(&mesh, 4) {
            Err(TemplateError::NonManifold { vertex, .. }) => assert_eq!(vertex, 0),
            other => panic!("expected non-manifold error, got {other:?}"),
        }
    }

    #[test]
    fn duplicated_directed_edge_is_rejected() {
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let mesh = TriMesh::new(vertices, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert!(matches!(
            spiral_sequences(&mesh, 4),
            Err(TemplateError::NonManifold { vertex: 0, .. })
        ));
    }

    #[test]
    fn zero_kernel_is_rejected() {
        let mesh = grid3x3();
        assert!(matches!(
            spiral_sequences(&mesh, 0),
            Err(TemplateError::Invalid { what: "kernel", .. })
        ));
    }
}
