//! Quadric edge-collapse decimation with vertex ancestry tracking.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use mesh_core::{vec3, TriMesh};
use nalgebra::{Matrix3, Vector3};

use crate::{Result, TemplateError};

/// A decimated mesh plus the surviving-vertex assignment of the input.
#[derive(Debug, Clone)]
pub struct Decimation {
    pub mesh: TriMesh,
    /// For each input vertex, the index of the output vertex it collapsed into.
    pub ancestry: Vec<usize>,
    /// True when no further collapse was possible before reaching the target.
    pub stopped_early: bool,
}

/// Collapses edges by ascending quadric cost until `target` vertices remain.
pub fn decimate(mesh: &TriMesh, target: usize) -> Result<Decimation> {
    let n = mesh.vertices.len();
    if target < 3 || target >= n {
        return Err(TemplateError::DecimationTarget { target, current: n });
    }

    let diag2 = {
        let d = mesh.bbox_diagonal();
        d * d
    };
    let mut pos = mesh.vertices.clone();
    let mut quadric = initial_quadrics(mesh);
    let mut faces: Vec<[usize; 3]> = mesh.faces.clone();
    let mut face_alive = vec![true; faces.len()];
    let mut vfaces: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (f, face) in faces.iter().enumerate() {
        for &v in face {
            vfaces[v].insert(f);
        }
    }
    let mut alive = vec![true; n];
    let mut alive_count = n;
    let mut version = vec![0u32; n];
    let mut parent: Vec<usize> = (0..n).collect();

    let neighbors = |vfaces: &[BTreeSet<usize>], faces: &[[usize; 3]], v: usize| -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &f in &vfaces[v] {
            for &w in &faces[f] {
                if w != v {
                    out.insert(w);
                }
            }
        }
        out
    };

    let mut heap: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
    let push_edges_of = |heap: &mut BinaryHeap<Reverse<Cand>>,
                         vfaces: &[BTreeSet<usize>],
                         faces: &[[usize; 3]],
                         quadric: &[Quadric],
                         pos: &[[f64; 3]],
                         version: &[u32],
                         v: usize| {
        for w in neighbors(vfaces, faces, v) {
            let (a, b) = (v.min(w), v.max(w));
            heap.push(Reverse(candidate(a, b, quadric, pos, version)));
        }
    };
    for v in 0..n {
        for w in neighbors(&vfaces, &faces, v) {
            if v < w {
                heap.push(Reverse(candidate(v, w, &quadric, &pos, &version)));
            }
        }
    }

    let mut stopped_early = false;
    let mut progressed = true;
    while alive_count > target {
        let Some(Reverse(cand)) = heap.pop() else {
            // 1. Heap exhausted: rebuild once, stop if the last round was sterile.
            if !progressed {
                stopped_early = true;
                log::warn!(
                    "decimation stalled at {alive_count} vertices (target {target}); no collapsible edge remains"
                );
                break;
            }
            progressed = false;
            for v in 0..n {
                if alive[v] {
                    for w in neighbors(&vfaces, &faces, v) {
                        if v < w {
                            heap.push(Reverse(candidate(v, w, &quadric, &pos, &version)));
                        }
                    }
                }
            }
            continue;
        };
        let (u, v) = (cand.u, cand.v);
        // 2. Drop stale entries.
        if !alive[u] || !alive[v] || version[u] != cand.ver_u || version[v] != cand.ver_v {
            continue;
        }
        let shared: Vec<usize> = vfaces[u].intersection(&vfaces[v]).copied().filter(|&f| face_alive[f]).collect();
        if shared.is_empty() {
            continue;
        }
        // 3. Link condition: the edge neighborhoods may only meet at the shared faces.
        if shared.len() > 2 {
            continue;
        }
        let common = neighbors(&vfaces, &faces, u).intersection(&neighbors(&vfaces, &faces, v)).count();
        if common != shared.len() {
            continue;
        }
        // 4. Reject collapses that flip or degenerate a surviving face.
        let mut ok = true;
        for &f in vfaces[u].union(&vfaces[v]) {
            if !face_alive[f] || shared.contains(&f) {
                continue;
            }
            let tri = faces[f];
            let old = face_cross(&pos, tri);
            let moved: Vec<[f64; 3]> = tri
                .iter()
                .map(|&c| if c == u || c == v { cand.place } else { pos[c] })
                .collect();
            let new = vec3::cross(vec3::sub(moved[1], moved[0]), vec3::sub(moved[2], moved[0]));
            if vec3::dot(old, new) <= 0.0 || 0.5 * vec3::norm(new) < 1e-12 * diag2 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        // 5. Collapse v into u.
        version[u] += 1;
        version[v] += 1;
        alive[v] = false;
        alive_count -= 1;
        parent[v] = u;
        pos[u] = cand.place;
        let qv = quadric[v];
        quadric[u].add(&qv);
        for f in vfaces[v].clone() {
            if !face_alive[f] {
                continue;
            }
            if shared.contains(&f) {
                face_alive[f] = false;
                for &c in &faces[f] {
                    vfaces[c].remove(&f);
                }
            } else {
                for c in faces[f].iter_mut() {
                    if *c == v {
                        *c = u;
                    }
                }
                vfaces[u].insert(f);
            }
        }
        vfaces[v].clear();
        progressed = true;
        push_edges_of(&mut heap, &vfaces, &faces, &quadric, &pos, &version, u);
    }

    // 6. Compact the surviving vertices and resolve the ancestry chains.
    let mut compact = vec![usize::MAX; n];
    let mut vertices = Vec::with_capacity(alive_count);
    for v in 0..n {
        if alive[v] {
            compact[v] = vertices.len();
            vertices.push(pos[v]);
        }
    }
    let mut out_faces = Vec::new();
    for (f, face) in faces.iter().enumerate() {
        if face_alive[f] {
            let mapped = [compact[face[0]], compact[face[1]], compact[face[2]]];
            if mapped[0] != mapped[1] && mapped[1] != mapped[2] && mapped[0] != mapped[2] {
                out_faces.push(mapped);
            }
        }
    }
    let mut ancestry = vec![0usize; n];
    for v in 0..n {
        let mut r = v;
        while parent[r] != r {
            r = parent[r];
        }
        let mut w = v;
        while parent[w] != w {
            let next = parent[w];
            parent[w] = r;
            w = next;
        }
        ancestry[v] = compact[r];
    }
    Ok(Decimation { mesh: TriMesh::new(vertices, out_faces)?, ancestry, stopped_early })
}

/// Symmetric 4x4 error quadric, upper triangle packed as
/// [xx, xy, xz, xw, yy, yz, yw, zz, zw, ww].
#[derive(Debug, Clone, Copy)]
struct Quadric([f64; 10]);

impl Quadric {
    fn zero() -> Self {
        Quadric([0.0; 10])
    }

    fn from_plane(normal: [f64; 3], d: f64, weight: f64) -> Self {
        let [a, b, c] = normal;
        Quadric([
            weight * a * a,
            weight * a * b,
            weight * a * c,
            weight * a * d,
            weight * b * b,
            weight * b * c,
            weight * b * d,
            weight * c * c,
            weight * c * d,
            weight * d * d,
        ])
    }

    fn add(&mut self, other: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += b;
        }
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        let [xx, xy, xz, xw, yy, yz, yw, zz, zw, ww] = self.0;
        let [x, y, z] = p;
        xx * x * x
            + yy * y * y
            + zz * z * z
            + 2.0 * (xy * x * y + xz * x * z + yz * y * z + xw * x + yw * y + zw * z)
            + ww
    }

    /// Minimizer of the quadric, or `None` when the normal system is singular.
    fn minimize(&self) -> Option<[f64; 3]> {
        let [xx, xy, xz, xw, yy, yz, yw, zz, zw, _] = self.0;
        let a = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
        let b = Vector3::new(xw, yw, zw);
        let p = a.lu().solve(&(-b))?;
        let residual = (a * p + b).norm();
        if residual <= 1e-8 * (1.0 + b.norm()) {
            Some([p.x, p.y, p.z])
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    cost: f64,
    u: usize,
    v: usize,
    ver_u: u32,
    ver_v: u32,
    place: [f64; 3],
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cand {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.u.cmp(&other.u))
            .then_with(|| self.v.cmp(&other.v))
    }
}

fn candidate(u: usize, v: usize, quadric: &[Quadric], pos: &[[f64; 3]], version: &[u32]) -> Cand {
    let mut q = quadric[u];
    q.add(&quadric[v]);
    let place = match q.minimize() {
        Some(p) => p,
        None => {
            // Fall back to the cheapest of midpoint and the two endpoints.
            let mid = vec3::scale(vec3::add(pos[u], pos[v]), 0.5);
            let mut best = mid;
            let mut best_cost = q.eval(mid);
            for p in [pos[u], pos[v]] {
                let c = q.eval(p);
                if c < best_cost {
                    best = p;
                    best_cost = c;
                }
            }
            best
        }
    };
    Cand { cost: q.eval(place), u, v, ver_u: version[u], ver_v: version[v], place }
}

fn face_cross(pos: &[[f64; 3]], tri: [usize; 3]) -> [f64; 3] {
    vec3::cross(vec3::sub(pos[tri[1]], pos[tri[0]]), vec3::sub(pos[tri[2]], pos[tri[0]]))
}

/// Area-weighted plane quadrics plus stiff constraint planes along boundary edges.
fn initial_quadrics(mesh: &TriMesh) -> Vec<Quadric> {
    let n = mesh.vertices.len();
    let mut quadric = vec![Quadric::zero(); n];
    let mut edge_faces: std::collections::BTreeMap<(usize, usize), u32> = std::collections::BTreeMap::new();
    for face in &mesh.faces {
        let p = [mesh.vertices[face[0]], mesh.vertices[face[1]], mesh.vertices[face[2]]];
        let cross = vec3::cross(vec3::sub(p[1], p[0]), vec3::sub(p[2], p[0]));
        let area = 0.5 * vec3::norm(cross);
        if area > 0.0 {
            let normal = vec3::scale(cross, 1.0 / (2.0 * area));
            let d = -vec3::dot(normal, p[0]);
            let q = Quadric::from_plane(normal, d, area);
            for &v in face {
                quadric[v].add(&q);
            }
        }
        for e in 0..3 {
            let (i, j) = (face[e], face[(e + 1) % 3]);
            *edge_faces.entry((i.min(j), i.max(j))).or_default() += 1;
        }
    }
    // Boundary edges get a plane through the edge, perpendicular to the face.
    for face in &mesh.faces {
        let p = [mesh.vertices[face[0]], mesh.vertices[face[1]], mesh.vertices[face[2]]];
        let fnormal = vec3::normalize(vec3::cross(vec3::sub(p[1], p[0]), vec3::sub(p[2], p[0])));
        for e in 0..3 {
            let (i, j) = (face[e], face[(e + 1) % 3]);
            if edge_faces[&(i.min(j), i.max(j))] != 1 {
                continue;
            }
            let edge = vec3::sub(p[(e + 1) % 3], p[e]);
            let len2 = vec3::norm2(edge);
            let normal = vec3::normalize(vec3::cross(edge, fnormal));
            if vec3::norm2(normal) == 0.0 {
                continue;
            }
            let d = -vec3::dot(normal, p[e]);
            let q = Quadric::from_plane(normal, d, 1e3 * len2);
            quadric[i].add(&q);
            quadric[j].add(&q);
        }
    }
    quadric
}

#[cfg(test)]
mod tests {
    use super::*;
    use mesh_core::shapes::{icosphere, unit_grid, GridDiagonals};

    #[test]
    fn sphere_stays_on_the_sphere() {
        let mesh = icosphere(3, 1.0);
        let dec = decimate(&mesh, 162).unwrap();
        assert!(!dec.stopped_early);
        assert_eq!(dec.mesh.vertices.len(), 162);
        let errs: Vec<f64> = dec.mesh.vertices.iter().map(|p| (vec3::norm(*p) - 1.0).abs()).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let max = errs.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(mean < 0.01, "mean radial error {mean}");
        assert!(max < 0.05, "max radial error {max}");
    }

    #[test]
    fn planar_grid_stays_planar() {
        let mesh = unit_grid(20, 20, GridDiagonals::Uniform);
        let dec = decimate(&mesh, 100).unwrap();
        assert!(!dec.stopped_early);
        assert_eq!(dec.mesh.vertices.len(), 100);
        for p in &dec.mesh.vertices {
            assert!(p[2].abs() < 1e-9, "left the plane: {p:?}");
        }
        // Corners carry boundary constraints from both sides and must survive in place.
        let has = |x: f64, y: f64| {
            dec.mesh.vertices.iter().any(|p| (p[0] - x).abs() < 0.8 && (p[1] - y).abs() < 0.8)
        };
        assert!(has(0.0, 0.0) && has(19.0, 0.0) && has(0.0, 19.0) && has(19.0, 19.0));
    }

    #[test]
    fn ancestry_covers_every_output_vertex() {
        let mesh = icosphere(2, 1.0);
        let dec = decimate(&mesh, 40).unwrap();
        assert_eq!(dec.ancestry.len(), mesh.vertices.len());
        let n = dec.mesh.vertices.len();
        let mut hit = vec![false; n];
        for &a in &dec.ancestry {
            assert!(a < n);
            hit[a] = true;
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn decimation_is_deterministic() {
        let mesh = icosphere(2, 1.0);
        let a = decimate(&mesh, 50).unwrap();
        let b = decimate(&mesh, 50).unwrap();
        assert_eq!(a.mesh.vertices, b.mesh.vertices);
        assert_eq!(a.mesh.faces, b.mesh.faces);
        assert_eq!(a.ancestry, b.ancestry);
    }

    #[test]
    fn bad_targets_are_rejected() {
        let mesh = icosphere(1, 1.0);
        let n = mesh.vertices.len();
        for target in [0, 2, n, n + 7] {
            assert!(matches!(
                decimate(&mesh, target),
                Err(TemplateError::DecimationTarget { .. })
            ));
        }
    }

    #[test]
    fn stuck_mesh_stops_early() {
        // A two-sided square: every edge fails the link condition.
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [2, 1, 0], [3, 2, 0]];
        let mesh = TriMesh::new(vertices, faces).unwrap();
        let dec = decimate(&mesh, 3).unwrap();
        assert!(dec.stopped_early);
        assert_eq!(dec.mesh.vertices.len(), 4);
    }
}
