//! Core mesh types and derived quantities (vertex normals, edge sets).

use crate::vec3;
use crate::MeshError;
use std::collections::BTreeMap;

/// Indexed triangle mesh. Faces are triples of vertex indices with
/// counter-clockwise winding defining the outward orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    /// Semantic label to vertex index, e.g. "nose_tip" -> 132.
    pub landmarks: BTreeMap<String, usize>,
}

impl TriMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = TriMesh { vertices, faces, landmarks: BTreeMap::new() };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Checks index ranges and coordinate finiteness.
    pub fn validate(&self) -> Result<(), MeshError> {
        for (vi, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(MeshError::NonFiniteVertex { vertex: vi });
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i >= self.vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: i,
                        count: self.vertices.len(),
                    });
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn face_points(&self, f: [usize; 3]) -> ([f64; 3], [f64; 3], [f64; 3]) {
        (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]])
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|&f| {
                let (a, b, c) = self.face_points(f);
                vec3::triangle_area(a, b, c)
            })
            .sum()
    }

    /// Axis-aligned bounding box as (min, max). Zero-extent for empty meshes.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        if self.vertices.is_empty() {
            return ([0.0; 3], [0.0; 3]);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        vec3::dist(lo, hi)
    }
}

/// Unordered point set, optionally with per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-vertex normals with a validity flag for vertices whose incident
/// faces all have zero area (their normal is the zero vector).
#[derive(Debug, Clone)]
pub struct VertexNormals {
    pub normals: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

/// Area-weighted vertex normals. Each face contributes its unnormalized
/// cross product (twice the area times the unit normal), so degenerate
/// faces contribute zero weight.
pub fn vertex_normals(mesh: &TriMesh) -> VertexNormals {
    let mut acc = vec![[0.0f64; 3]; mesh.vertices.len()];
    for &f in &mesh.faces {
        let (a, b, c) = mesh.face_points(f);
        let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
        for &i in &f {
            acc[i] = vec3::add(acc[i], n);
        }
    }
    let mut valid = vec![false; mesh.vertices.len()];
    for (i, n) in acc.iter_mut().enumerate() {
        let len = vec3::norm(*n);
        if len > 0.0 {
            *n = vec3::scale(*n, 1.0 / len);
            valid[i] = true;
        } else {
            *n = [0.0; 3];
        }
    }
    VertexNormals { normals: acc, valid }
}

/// Unique undirected edges with rest lengths, sorted by (min, max) index.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub edges: Vec<(usize, usize)>,
    pub lengths: Vec<f64>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Collects the unique undirected edge set of the mesh with Euclidean rest
/// lengths. Edges with repeated endpoints are skipped; an edge between two
/// coincident vertices is an error because downstream losses divide by the
/// rest length.
pub fn edge_set(mesh: &TriMesh) -> Result<EdgeSet, MeshError> {
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(mesh.faces.len() * 3);
    for &f in &mesh.faces {
        for (i, j) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            if i == j {
                continue;
            }
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut lengths = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let l = vec3::dist(mesh.vertices[i], mesh.vertices[j]);
        if l <= 0.0 {
            return Err(MeshError::DegenerateEdge { a: i, b: j });
        }
        lengths.push(l);
    }
    Ok(EdgeSet { edges: pairs, lengths })
}

/// Mean edge length of the unique edge set.
pub fn mean_edge_length(mesh: &TriMesh) -> Result<f64, MeshError> {
    let es = edge_set(mesh)?;
    if es.is_empty() {
        return Err(MeshError::NoSamplableArea);
    }
    Ok(es.lengths.iter().sum::<f64>() / es.lengths.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3;

    fn square() -> TriMesh {
        // Two coplanar triangles in the z = 0 plane.
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn flat_square_normals_equal_face_normal() {
        let vn = vertex_normals(&square());
        for i in 0..4 {
            assert!(vn.valid[i]);
            let n = vn.normals[i];
            assert!((n[0]).abs() < 1e-15 && (n[1]).abs() < 1e-15);
            assert!((n[2] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_face_contributes_zero_weight() {
        // Vertex 0 touches one real face and one zero-area face.
        let mesh = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let vn = vertex_normals(&mesh);
        assert!(vn.valid[0]);
        assert!((vn.normals[0][2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_degenerate_vertex_is_flagged_invalid() {
        let mesh = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let vn = vertex_normals(&mesh);
        assert!(vn.valid.iter().all(|v| !v));
        assert!(vn.normals.iter().all(|n| *n == [0.0; 3]));
    }

    #[test]
    fn normals_rotate_with_the_mesh() {
        let mesh = crate::shapes::icosphere(2, 1.0);
        let vn = vertex_normals(&mesh);
        // Rotate 90 degrees around x: (x, y, z) -> (x, -z, y).
        let rotated = TriMesh::new(
            mesh.vertices.iter().map(|v| [v[0], -v[2], v[1]]).collect(),
            mesh.faces.clone(),
        )
        .unwrap();
        let vn_rot = vertex_normals(&rotated);
        for i in 0..mesh.vertices.len() {
            let n = vn.normals[i];
            let expect = [n[0], -n[2], n[1]];
            assert!(vec3::dist(vn_rot.normals[i], expect) < 1e-9);
        }
    }

    #[test]
    fn icosphere_normals_are_near_radial() {
        let mesh = crate::shapes::icosphere(3, 1.0);
        let vn = vertex_normals(&mesh);
        let max_angle_deg: f64 = 2.0;
        let min_cos = max_angle_deg.to_radians().cos();
        for (v, n) in mesh.vertices.iter().zip(&vn.normals) {
            let radial = vec3::normalize(*v);
            assert!(vec3::dot(radial, *n) >= min_cos, "normal deviates more than 2 degrees");
        }
    }

    #[test]
    fn edge_counts_for_simple_meshes() {
        let tri = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(edge_set(&tri).unwrap().len(), 3);
        assert_eq!(edge_set(&square()).unwrap().len(), 5);
    }

    #[test]
    fn edge_set_is_face_order_independent() {
        let mesh = crate::shapes::icosphere(2, 1.0);
        let mut shuffled = mesh.clone();
        shuffled.faces.reverse();
        shuffled.faces.swap(0, 7);
        let a = edge_set(&mesh).unwrap();
        let b = edge_set(&shuffled).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_length_edge_is_rejected() {
        let mesh = TriMesh::new(
            vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(edge_set(&mesh), Err(MeshError::DegenerateEdge { a: 0, b: 1 })));
    }

    #[test]
    fn out_of_range_face_is_rejected() {
        let err = TriMesh::new(vec![[0.0; 3]], vec![[0, 0, 1]]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { index: 1, .. }));
    }
}
