//! Procedural reference meshes used by tests and the synthetic data tools.

use crate::mesh::TriMesh;
use crate::vec3;
use std::collections::HashMap;

/// Icosahedron oriented with vertex 0 at the north pole (0, 0, r) and
/// vertex 11 at the south pole, refined by `subdiv` rounds of 4-to-1 loop
/// splitting with projection back onto the sphere of radius `r`.
pub fn icosphere(subdiv: u32, r: f64) -> TriMesh {
    // Two poles plus two pentagonal rings at z = +-1/sqrt(5).
    let mut vertices: Vec<[f64; 3]> = vec![[0.0, 0.0, 1.0]];
    let zr = 1.0 / 5f64.sqrt();
    let rr = 2.0 * zr;
    for i in 0..5 {
        let a = 2.0 * std::f64::consts::PI * i as f64 / 5.0;
        vertices.push([rr * a.cos(), rr * a.sin(), zr]);
    }
    for i in 0..5 {
        let a = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / 5.0;
        vertices.push([rr * a.cos(), rr * a.sin(), -zr]);
    }
    vertices.push([0.0, 0.0, -1.0]);

    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(20);
    for i in 0..5 {
        let j = (i + 1) % 5;
        let (u, uj) = (1 + i, 1 + j);
        let (l, lj) = (6 + i, 6 + j);
        faces.push([0, u, uj]);
        faces.push([u, l, uj]);
        faces.push([uj, l, lj]);
        faces.push([l, 11, lj]);
    }

    let mut mesh = TriMesh { vertices, faces, landmarks: Default::default() };
    for _ in 0..subdiv {
        mesh = split_faces(&mesh);
        for v in &mut mesh.vertices {
            *v = vec3::normalize(*v);
        }
    }
    for v in &mut mesh.vertices {
        *v = vec3::scale(vec3::normalize(*v), r);
    }
    mesh.validate().expect("icosphere construction is valid");
    mesh
}

fn split_faces(mesh: &TriMesh) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 3]>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoint.entry(key).or_insert_with(|| {
            let m = vec3::scale(vec3::add(vertices[a], vertices[b]), 0.5);
            vertices.push(m);
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for &[a, b, c] in &mesh.faces {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        faces.push([a, ab, ca]);
        faces.push([ab, b, bc]);
        faces.push([ca, bc, c]);
        faces.push([ab, bc, ca]);
    }
    TriMesh { vertices, faces, landmarks: Default::default() }
}

/// Diagonal layout for [`unit_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridDiagonals {
    /// Every cell is split along the same diagonal.
    Uniform,
    /// Diagonals alternate in a checkerboard, reducing directional bias.
    Alternating,
}

/// Planar grid of `nx` by `ny` vertices in the z = 0 plane with unit
/// spacing. Vertex (col, row) has index `row * nx + col`; faces wind
/// counter-clockwise viewed from +z.
pub fn unit_grid(nx: usize, ny: usize, diagonals: GridDiagonals) -> TriMesh {
    assert!(nx >= 2 && ny >= 2, "grid needs at least 2x2 vertices");
    let mut vertices = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        for col in 0..nx {
            vertices.push([col as f64, row as f64, 0.0]);
        }
    }
    let mut faces = Vec::with_capacity((nx - 1) * (ny - 1) * 2);
    for row in 0..ny - 1 {
        for col in 0..nx - 1 {
            let a = row * nx + col;
            let b = a + 1;
            let d = a + nx;
            let e = d + 1;
            let flip = diagonals == GridDiagonals::Alternating && (row + col) % 2 == 1;
            if flip {
                faces.push([a, b, d]);
                faces.push([b, e, d]);
            } else {
                faces.push([a, b, e]);
                faces.push([a, e, d]);
            }
        }
    }
    TriMesh { vertices, faces, landmarks: Default::default() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_radius() {
        // 12 vertices, 20 faces; each subdivision multiplies faces by 4.
        for (sub, nv, nf) in [(0u32, 12usize, 20usize), (1, 42, 80), (2, 162, 320), (4, 2562, 5120)] {
            let m = icosphere(sub, 1.0);
            assert_eq!(m.vertices.len(), nv);
            assert_eq!(m.faces.len(), nf);
            for v in &m.vertices {
                assert!((crate::vec3::norm(*v) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn icosphere_has_poles() {
        let m = icosphere(4, 2.5);
        assert!(crate::vec3::dist(m.vertices[0], [0.0, 0.0, 2.5]) < 1e-12);
    }

    #[test]
    fn icosphere_winding_is_outward() {
        let m = icosphere(1, 1.0);
        for &f in &m.faces {
            let (a, b, c) = m.face_points(f);
            let n = crate::vec3::cross(crate::vec3::sub(b, a), crate::vec3::sub(c, a));
            let centroid = crate::vec3::scale(crate::vec3::add(crate::vec3::add(a, b), c), 1.0 / 3.0);
            assert!(crate::vec3::dot(n, centroid) > 0.0, "face winds inward");
        }
    }

    #[test]
    fn grid_indices_and_faces() {
        let g = unit_grid(3, 3, GridDiagonals::Uniform);
        assert_eq!(g.vertices.len(), 9);
        assert_eq!(g.faces.len(), 8);
        assert_eq!(g.vertices[4], [1.0, 1.0, 0.0]);
        assert_eq!(g.faces[0], [0, 1, 4]);
        assert_eq!(g.faces[1], [0, 4, 3]);
    }
}
