//! Heat-method geodesic distance fields on triangle meshes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use mesh_core::mesh::mean_edge_length;
use mesh_core::{vec3, TriMesh};

use crate::{Result, TemplateError};

/// Geodesic distances from a set of source vertices.
#[derive(Debug, Clone)]
pub struct GeodesicField {
    /// Distance per vertex; exactly zero at every source.
    pub distance: Vec<f64>,
    /// Deduplicated, sorted source vertices.
    pub sources: Vec<usize>,
}

/// Computes geodesic distances from `sources` to every vertex.
///
/// Diffuses heat for time `t = t_factor * h^2` (`h` mean edge length), then
/// recovers distances from the normalized heat gradient via a Poisson solve.
pub fn geodesic_distance(mesh: &TriMesh, sources: &[usize], t_factor: f64) -> Result<GeodesicField> {
    let n = mesh.vertices.len();
    if sources.is_empty() {
        return Err(TemplateError::Invalid { what: "sources", msg: "no source vertices given".into() });
    }
    if !t_factor.is_finite() || t_factor <= 0.0 {
        return Err(TemplateError::Invalid {
            what: "t_factor",
            msg: format!("must be finite and positive, got {t_factor}"),
        });
    }
    let sources: Vec<usize> = sources.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if let Some(&bad) = sources.iter().find(|&&s| s >= n) {
        return Err(TemplateError::Invalid {
            what: "sources",
            msg: format!("vertex {bad} out of range for {n} vertices"),
        });
    }

    // 1. Connectivity: every vertex must be reachable from the sources.
    let adj = adjacency(mesh);
    check_connected(&adj, sources[0])?;

    // 2. Assemble the lumped mass and clamped cotangent stiffness.
    let h = mean_edge_length(mesh)?;
    let t = t_factor * h * h;
    let mut mass = vec![0.0f64; n];
    let mut stiff: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for face in &mesh.faces {
        let [a, b, c] = *face;
        let p = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
        let Some(geom) = face_geom(&p) else { continue };
        let third = geom.area / 3.0;
        mass[a] += third;
        mass[b] += third;
        mass[c] += third;
        for (cot, i, j) in [(geom.cot[0], b, c), (geom.cot[1], c, a), (geom.cot[2], a, b)] {
            let w = 0.5 * cot;
            *stiff.entry((i, i)).or_default() += w;
            *stiff.entry((j, j)).or_default() += w;
            *stiff.entry(key(i, j)).or_default() -= w;
        }
    }

    // 3. Reorder for a narrow band, then factor both operators once.
    let order = rcm_order(&adj);
    let mut inv = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        inv[old] = new;
    }
    let bw = stiff.keys().map(|&(i, j)| inv[i].abs_diff(inv[j])).max().unwrap_or(0);
    let max_diag = (0..n).map(|i| stiff.get(&(i, i)).copied().unwrap_or(0.0)).fold(0.0f64, f64::max);
    let jitter = 1e-9 * max_diag.max(1e-300);

    let mut heat = Banded::new(n, bw);
    let mut poisson = Banded::new(n, bw);
    for (&(i, j), &w) in &stiff {
        heat.add(inv[i], inv[j], t * w);
        poisson.add(inv[i], inv[j], w);
    }
    for i in 0..n {
        heat.add(inv[i], inv[i], mass[i]);
        poisson.add(inv[i], inv[i], jitter);
    }
    let heat = heat.cholesky("factoring the heat operator")?;
    let poisson = poisson.cholesky("factoring the distance operator")?;

    // 4. Heat step: one impulse of heat at each source.
    let mut rhs = vec![0.0f64; n];
    for &s in &sources {
        rhs[inv[s]] = 1.0;
    }
    let u_perm = heat.solve(&rhs);
    let mut u = vec![0.0f64; n];
    for i in 0..n {
        u[i] = u_perm[inv[i]];
    }

    // 5. Normalized gradient field and its integrated divergence.
    let mut div = vec![0.0f64; n];
    for face in &mesh.faces {
        let [a, b, c] = *face;
        let p = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
        let Some(geom) = face_geom(&p) else { continue };
        let normal = vec3::normalize(vec3::cross(vec3::sub(p[1], p[0]), vec3::sub(p[2], p[0])));
        let mut grad = [0.0f64; 3];
        for (uv, opp) in [(u[a], 0), (u[b], 1), (u[c], 2)] {
            let e = vec3::sub(p[(opp + 2) % 3], p[(opp + 1) % 3]);
            grad = vec3::add(grad, vec3::scale(vec3::cross(normal, e), uv));
        }
        grad = vec3::scale(grad, 1.0 / (2.0 * geom.area));
        let len = vec3::norm(grad);
        if len <= 0.0 {
            continue;
        }
        let x = vec3::scale(grad, -1.0 / len);
        for (v, o1, o2) in [(0usize, 1usize, 2usize), (1, 2, 0), (2, 0, 1)] {
            let e1 = vec3::sub(p[o1], p[v]);
            let e2 = vec3::sub(p[o2], p[v]);
            let idx = [a, b, c][v];
            div[idx] += 0.5 * (geom.cot[o2] * vec3::dot(e1, x) + geom.cot[o1] * vec3::dot(e2, x));
        }
    }

    // 6. Poisson step, then pin the sources to zero.
    for i in 0..n {
        rhs[inv[i]] = -div[i];
    }
    let phi_perm = poisson.solve(&rhs);
    let mut distance = vec![0.0f64; n];
    for i in 0..n {
        distance[i] = phi_perm[inv[i]];
    }
    let shift = sources.iter().map(|&s| distance[s]).fold(f64::INFINITY, f64::min);
    for d in &mut distance {
        *d -= shift;
    }

    // 7. Linear elements flatten the cone apex at each source, which depresses the
    //    whole field by a constant; recalibrate against the exact one-ring distances.
    let mut is_source = vec![false; n];
    for &s in &sources {
        is_source[s] = true;
    }
    let mut delta = 0.0;
    let mut ring = 0usize;
    let mut seen = vec![false; n];
    for &s in &sources {
        for &v in &adj[s] {
            if is_source[v] || seen[v] {
                continue;
            }
            seen[v] = true;
            let exact = adj[v]
                .iter()
                .filter(|&&w| is_source[w])
                .map(|&w| vec3::norm(vec3::sub(mesh.vertices[v], mesh.vertices[w])))
                .fold(f64::INFINITY, f64::min);
            delta += exact - distance[v];
            ring += 1;
        }
    }
    if ring > 0 {
        let delta = delta / ring as f64;
        for (v, d) in distance.iter_mut().enumerate() {
            if !is_source[v] {
                *d += delta;
            }
        }
    }
    for d in &mut distance {
        *d = d.max(0.0);
    }
    for &s in &sources {
        distance[s] = 0.0;
    }
    Ok(GeodesicField { distance, sources })
}

/// Sorted vertices whose geodesic distance is at most `radius`.
pub fn geodesic_ball(field: &GeodesicField, radius: f64) -> Result<Vec<usize>> {
    if !radius.is_finite() || radius < 0.0 {
        return Err(TemplateError::Invalid {
            what: "radius",
            msg: format!("must be finite and non-negative, got {radius}"),
        });
    }
    Ok((0..field.distance.len()).filter(|&v| field.distance[v] <= radius).collect())
}

fn key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Sorted neighbor lists from face connectivity.
pub(crate) fn adjacency(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let mut adj = vec![BTreeSet::new(); mesh.vertices.len()];
    for face in &mesh.faces {
        for e in 0..3 {
            let (i, j) = (face[e], face[(e + 1) % 3]);
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

pub(crate) fn check_connected(adj: &[Vec<usize>], from: usize) -> Result<()> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    let mut reachable = 1usize;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                reachable += 1;
                queue.push_back(u);
            }
        }
    }
    if reachable < n {
        let vertex = seen.iter().position(|&s| !s).unwrap();
        return Err(TemplateError::Disconnected { vertex, from, reachable, total: n });
    }
    Ok(())
}

struct FaceGeom {
    area: f64,
    /// Cotangent of the interior angle at each corner, clamped to be non-negative.
    cot: [f64; 3],
}

fn face_geom(p: &[[f64; 3]; 3]) -> Option<FaceGeom> {
    let area = vec3::triangle_area(p[0], p[1], p[2]);
    if area <= 1e-300 {
        return None;
    }
    let mut cot = [0.0f64; 3];
    for v in 0..3 {
        let u1 = vec3::sub(p[(v + 1) % 3], p[v]);
        let u2 = vec3::sub(p[(v + 2) % 3], p[v]);
        cot[v] = (vec3::dot(u1, u2) / (2.0 * area)).max(0.0);
    }
    Some(FaceGeom { area, cot })
}

/// Reverse Cuthill-McKee ordering; returns new position -> old vertex.
fn rcm_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    if n == 0 {
        return Vec::new();
    }
    // 1. Pseudo-peripheral start vertex via repeated BFS.
    let mut start = (0..n).min_by_key(|&v| (adj[v].len(), v)).unwrap();
    let mut ecc = 0usize;
    for _ in 0..16 {
        let (far, far_ecc) = bfs_far(adj, start);
        if far_ecc > ecc {
            ecc = far_ecc;
            start = far;
        } else {
            break;
        }
    }
    // 2. Cuthill-McKee breadth-first order, low-degree neighbors first.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
        next.sort_by_key(|&u| (adj[u].len(), u));
        for u in next {
            seen[u] = true;
            queue.push_back(u);
        }
    }
    for v in 0..n {
        if !seen[v] {
            order.push(v);
        }
    }
    order.reverse();
    order
}

/// Farthest BFS level from `start` and a minimum-degree vertex in it.
fn bfs_far(adj: &[Vec<usize>], start: usize) -> (usize, usize) {
    let n = adj.len();
    let mut level = vec![usize::MAX; n];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if level[u] == usize::MAX {
                level[u] = level[v] + 1;
                queue.push_back(u);
            }
        }
        last = v;
    }
    let ecc = level[last];
    let far = (0..n)
        .filter(|&v| level[v] == ecc)
        .min_by_key(|&v| (adj[v].len(), v))
        .unwrap_or(last);
    (far, ecc)
}

/// Symmetric positive definite band matrix, lower band stored row-major.
struct Banded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Banded {
    fn new(n: usize, bw: usize) -> Self {
        Banded { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Accumulates into entry (i, j); only the lower triangle is stored.
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if j <= i { (i, j) } else { (j, i) };
        let at = self.idx(r, c);
        self.data[at] += v;
    }

    /// In-place Cholesky factorization, O(n * bw^2).
    fn cholesky(mut self, what: &'static str) -> Result<Banded> {
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                let mut s = self.data[self.idx(i, j)];
                for k in j0.max(j.saturating_sub(self.bw))..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let at = self.idx(i, j);
                if j < i {
                    let diag = self.idx(j, j);
                    self.data[at] = s / self.data[diag];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(TemplateError::Singular { what, row: i, pivot: s });
                    }
                    self.data[at] = s.sqrt();
                }
            }
        }
        Ok(self)
    }

    /// Solves L L^T x = b on a factored matrix.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        for i in 0..self.n {
            let mut s = x[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.data[self.idx(i, k)] * x[k];
            }
            x[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + self.bw + 1).min(self.n) {
                s -= self.data[self.idx(k, i)] * x[k];
            }
            x[i] = s / self.data[self.idx(i, i)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mesh_core::shapes::{icosphere, unit_grid, GridDiagonals};

    fn grid(nx: usize, ny: usize) -> TriMesh {
        unit_grid(nx, ny, GridDiagonals::Uniform)
    }

    #[test]
    fn all_sources_are_zero() {
        let mesh = grid(6, 5);
        let sources: Vec<usize> = (0..mesh.vertices.len()).collect();
        let field = geodesic_distance(&mesh, &sources, 1.0).unwrap();
        assert!(field.distance.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn planar_grid_matches_euclidean() {
        let mesh = grid(15, 15);
        let field = geodesic_distance(&mesh, &[0], 1.0).unwrap();
        let mut rels = Vec::new();
        for (v, p) in mesh.vertices.iter().enumerate() {
            let truth = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if truth < 3.0 {
                continue;
            }
            rels.push((field.distance[v] - truth).abs() / truth);
        }
        let mean = rels.iter().sum::<f64>() / rels.len() as f64;
        let max = rels.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(mean < 0.03, "mean relative error {mean}");
        assert!(max < 0.07, "max relative error {max}");
    }

    #[test]
    fn sphere_matches_great_circle() {
        let mesh = icosphere(2, 1.0);
        let field = geodesic_distance(&mesh, &[0], 1.0).unwrap();
        let mut rels = Vec::new();
        for (v, p) in mesh.vertices.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let truth = p[2].clamp(-1.0, 1.0).acos();
            rels.push((field.distance[v] - truth).abs() / truth);
        }
        let mean = rels.iter().sum::<f64>() / rels.len() as f64;
        let max = rels.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(mean < 0.04, "mean relative error {mean}");
        assert!(max < 0.10, "max relative error {max}");
    }

    #[test]
    fn distances_scale_with_the_mesh() {
        let mesh = grid(9, 7);
        let scaled = TriMesh::new(
            mesh.vertices.iter().map(|p| vec3::scale(*p, 2.5)).collect(),
            mesh.faces.clone(),
        )
        .unwrap();
        let base = geodesic_distance(&mesh, &[3], 1.0).unwrap();
        let big = geodesic_distance(&scaled, &[3], 1.0).unwrap();
        for v in 0..mesh.vertices.len() {
            if v == 3 {
                continue;
            }
            let rel = (big.distance[v] - 2.5 * base.distance[v]).abs() / (2.5 * base.distance[v]);
            assert!(rel < 1e-6, "vertex {v}: rel {rel}");
        }
    }

    #[test]
    fn balls_are_nested_and_bounded() {
        let mesh = icosphere(2, 1.0);
        let field = geodesic_distance(&mesh, &[0], 1.0).unwrap();
        assert_eq!(geodesic_ball(&field, 0.0).unwrap(), vec![0]);
        let all = geodesic_ball(&field, f64::MAX).unwrap();
        assert_eq!(all.len(), mesh.vertices.len());
        let small = geodesic_ball(&field, 0.8).unwrap();
        let large = geodesic_ball(&field, 1.6).unwrap();
        assert!(small.len() < large.len());
        assert!(small.iter().all(|v| large.binary_search(v).is_ok()));
        assert!(small.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn disconnected_mesh_is_rejected() {
        let vertices = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 0.0, 0.0],
            [6.0, 0.0, 0.0],
            [5.0, 1.0, 0.0],
        ];
        let mesh = TriMesh::new(vertices, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let err = geodesic_distance(&mesh, &[0], 1.0).unwrap_err();
        match err {
            TemplateError::Disconnected { vertex, from, reachable, total } => {
                assert_eq!(vertex, 3);
                assert_eq!(from, 0);
                assert_eq!(reachable, 3);
                assert_eq!(total, 6);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let mesh = grid(4, 4);
        assert!(matches!(
            geodesic_distance(&mesh, &[], 1.0),
            Err(TemplateError::Invalid { what: "sources", .. })
        ));
        assert!(matches!(
            geodesic_distance(&mesh, &[99], 1.0),
            Err(TemplateError::Invalid { what: "sources", .. })
        ));
        assert!(matches!(
            geodesic_distance(&mesh, &[0], 0.0),
            Err(TemplateError::Invalid { what: "t_factor", .. })
        ));
        assert!(matches!(
            geodesic_distance(&mesh, &[0], f64::NAN),
            Err(TemplateError::Invalid { what: "t_factor", .. })
        ));
        let field = geodesic_distance(&mesh, &[0], 1.0).unwrap();
        assert!(matches!(
            geodesic_ball(&field, -1.0),
            Err(TemplateError::Invalid { what: "radius", .. })
        ));
    }

    #[test]
    fn banded_cholesky_matches_dense_solve() {
        // 1. Random-ish SPD band matrix from a fixed recurrence.
        let n = 30;
        let bw = 4;
        let mut entries = Vec::new();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut banded = Banded::new(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v = next();
                entries.push((i, j, v));
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
            let d = 4.0 + next().abs();
            entries.push((i, i, d));
            dense[(i, i)] = d;
        }
        for (i, j, v) in entries {
            banded.add(i, j, v);
        }
        let chol = banded.cholesky("test").unwrap();
        // 2. Compare against the dense solution.
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = chol.solve(&b);
        let expect = dense
            .cholesky()
            .unwrap()
            .solve(&nalgebra::DVector::from_column_slice(&b));
        for i in 0..n {
            assert!((x[i] - expect[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn rcm_narrows_the_band() {
        let mesh = grid(12, 12);
        let adj = adjacency(&mesh);
        let order = rcm_order(&adj);
        let mut inv = vec![0usize; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert!(sorted.into_iter().eq(0..adj.len()));
        let bw = |f: &dyn Fn(usize) -> usize| {
            adj.iter()
                .enumerate()
                .flat_map(|(i, ns)| ns.iter().map(move |&j| f(i).abs_diff(f(j))))
                .max()
                .unwrap()
        };
        assert!(bw(&|v| inv[v]) <= bw(&|v| v));
    }
}
