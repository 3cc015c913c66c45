//! Exact nearest-neighbor and point-to-surface queries.
//!
//! The kd-tree and the triangle BVH are accelerators only: they return
//! exactly the same answer as a brute-force scan, including the tie rule
//! (smallest index wins on equal distance).

use crate::mesh::TriMesh;
use crate::vec3;

/// Closest point on triangle (a, b, c) to p, after Ericson's region walk.
/// Returns the point, its barycentric coordinates and the squared distance.
/// Barycentric coordinates are exact (0 or 1) in vertex and edge regions.
pub fn closest_point_triangle(
    p: [f64; 3],
    a: [f64; 3],
    b: [f64; 3],
    c: [f64; 3],
) -> ([f64; 3], [f64; 3], f64) {
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);
    let ap = vec3::sub(p, a);
    let d1 = vec3::dot(ab, ap);
    let d2 = vec3::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0], vec3::dist2(p, a));
    }

    let bp = vec3::sub(p, b);
    let d3 = vec3::dot(ab, bp);
    let d4 = vec3::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0], vec3::dist2(p, b));
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        let q = vec3::add(a, vec3::scale(ab, v));
        return (q, [1.0 - v, v, 0.0], vec3::dist2(p, q));
    }

    let cp = vec3::sub(p, c);
    let d5 = vec3::dot(ab, cp);
    let d6 = vec3::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0], vec3::dist2(p, c));
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        let q = vec3::add(a, vec3::scale(ac, w));
        return (q, [1.0 - w, 0.0, w], vec3::dist2(p, q));
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let q = vec3::add(b, vec3::scale(vec3::sub(c, b), w));
        return (q, [0.0, 1.0 - w, w], vec3::dist2(p, q));
    }

    // Interior region.
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = vec3::add(a, vec3::add(vec3::scale(ab, v), vec3::scale(ac, w)));
    (q, [1.0 - v - w, v, w], vec3::dist2(p, q))
}

// ---------------------------------------------------------------- kd-tree

/// Nearest-neighbor kd-tree over a point set. Ties on squared distance are
/// broken toward the smaller point index, matching a forward brute-force
/// scan exactly.
pub struct KdTree {
    points: Vec<[f64; 3]>,
    // Implicit tree over a permutation of point indices.
    order: Vec<usize>,
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

struct KdNode {
    axis: usize,
    split: f64,
    index: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn build(points: &[[f64; 3]]) -> KdTree {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        if !points.is_empty() {
            let n = points.len();
            tree.root = Some(tree.build_range(0, n, 0));
        }
        tree
    }

    fn build_range(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let axis = depth % 3;
        let mid = (lo + hi) / 2;
        // Median by (coordinate, index) keeps construction deterministic
        // under duplicate coordinates.
        let (points, order) = (&self.points, &mut self.order);
        order[lo..hi].select_nth_unstable_by(mid - lo, |&i, &j| {
            points[i][axis]
                .total_cmp(&points[j][axis])
                .then(i.cmp(&j))
        });
        let index = self.order[mid];
        let split = self.points[index][axis];
        let slot = self.nodes.len();
        self.nodes.push(KdNode { axis, split, index, left: None, right: None });
        if lo < mid {
            let l = self.build_range(lo, mid, depth + 1);
            self.nodes[slot].left = Some(l);
        }
        if mid + 1 < hi {
            let r = self.build_range(mid + 1, hi, depth + 1);
            self.nodes[slot].right = Some(r);
        }
        slot
    }

    /// Returns (point index, squared distance) of the nearest neighbor.
    pub fn nearest(&self, p: [f64; 3]) -> Option<(usize, f64)> {
        let root = self.root?;
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(root, p, &mut best);
        Some((best.0, best.1))
    }

    fn search(&self, node: usize, p: [f64; 3], best: &mut (usize, f64)) {
        let n = &self.nodes[node];
        let d2 = vec3::dist2(p, self.points[n.index]);
        if d2 < best.1 || (d2 == best.1 && n.index < best.0) {
            *best = (n.index, d2);
        }
        let delta = p[n.axis] - n.split;
        let (near, far) = if delta <= 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.search(c, p, best);
        }
        // A tying point may live exactly on the splitting plane, so only
        // prune when the plane is strictly farther than the current best.
        if let Some(c) = far {
            if delta * delta <= best.1 {
                self.search(c, p, best);
            }
        }
    }
}

/// Brute-force nearest neighbor with the same tie rule as [`KdTree`].
pub fn nearest_brute_force(points: &[[f64; 3]], p: [f64; 3]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in points.iter().enumerate() {
        let d2 = vec3::dist2(p, *q);
        if best.map_or(true, |(_, bd)| d2 < bd) {
            best = Some((i, d2));
        }
    }
    best
}

// ------------------------------------------------------------------- BVH

/// Result of a point-to-surface query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub face: usize,
    pub point: [f64; 3],
    pub barycentric: [f64; 3],
    pub dist2: f64,
}

/// Axis-aligned bounding box tree over mesh triangles for exact
/// point-to-surface distance queries.
pub struct TriangleBvh {
    tris: Vec<([f64; 3], [f64; 3], [f64; 3])>,
    nodes: Vec<BvhNode>,
    root: Option<usize>,
}

struct BvhNode {
    lo: [f64; 3],
    hi: [f64; 3],
    // Leaf: face index range into `leaf_faces`; inner: child slots.
    children: Option<(usize, usize)>,
    faces: Vec<usize>,
}

const BVH_LEAF_SIZE: usize = 8;

impl TriangleBvh {
    pub fn build(mesh: &TriMesh) -> TriangleBvh {
        let tris: Vec<_> = mesh.faces.iter().map(|&f| mesh.face_points(f)).collect();
        let mut bvh = TriangleBvh { tris, nodes: Vec::new(), root: None };
        if !bvh.tris.is_empty() {
            let mut idx: Vec<usize> = (0..bvh.tris.len()).collect();
            let root = bvh.build_node(&mut idx);
            bvh.root = Some(root);
        }
        bvh
    }

    fn tri_bounds(&self, fi: usize) -> ([f64; 3], [f64; 3]) {
        let (a, b, c) = self.tris[fi];
        let mut lo = a;
        let mut hi = a;
        for q in [b, c] {
            for k in 0..3 {
                lo[k] = lo[k].min(q[k]);
                hi[k] = hi[k].max(q[k]);
            }
        }
        (lo, hi)
    }

    fn build_node(&mut self, faces: &mut [usize]) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &fi in faces.iter() {
            let (tlo, thi) = self.tri_bounds(fi);
            for k in 0..3 {
                lo[k] = lo[k].min(tlo[k]);
                hi[k] = hi[k].max(thi[k]);
            }
        }
        let slot = self.nodes.len();
        self.nodes.push(BvhNode { lo, hi, children: None, faces: Vec::new() });

        if faces.len() <= BVH_LEAF_SIZE {
            self.nodes[slot].faces = faces.to_vec();
            return slot;
        }
        // Median split on centroids along the longest axis, index tie-break.
        let mut axis = 0;
        for k in 1..3 {
            if hi[k] - lo[k] > hi[axis] - lo[axis] {
                axis = k;
            }
        }
        let centroid = |tris: &[([f64; 3], [f64; 3], [f64; 3])], fi: usize| {
            let (a, b, c) = tris[fi];
            (a[axis] + b[axis] + c[axis]) / 3.0
        };
        let mid = faces.len() / 2;
        {
            let tris = &self.tris;
            faces.select_nth_unstable_by(mid, |&i, &j| {
                centroid(tris, i).total_cmp(&centroid(tris, j)).then(i.cmp(&j))
            });
        }
        let (left_faces, right_faces) = faces.split_at_mut(mid);
        let l = self.build_node(left_faces);
        let r = self.build_node(right_faces);
        self.nodes[slot].children = Some((l, r));
        slot
    }

    fn box_dist2(lo: [f64; 3], hi: [f64; 3], p: [f64; 3]) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let d = if p[k] < lo[k] {
                lo[k] - p[k]
            } else if p[k] > hi[k] {
                p[k] - hi[k]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }

    /// Exact closest surface point; equals the brute-force minimum over all
    /// triangles, with ties on squared distance broken by face index.
    pub fn closest_point(&self, p: [f64; 3]) -> Option<SurfaceHit> {
        let root = self.root?;
        let mut best = SurfaceHit {
            face: usize::MAX,
            point: [0.0; 3],
            barycentric: [0.0; 3],
            dist2: f64::INFINITY,
        };
        self.query(root, p, &mut best);
        Some(best)
    }

    fn query(&self, node: usize, p: [f64; 3], best: &mut SurfaceHit) {
        let n = &self.nodes[node];
        match n.children {
            None => {
                for &fi in &n.faces {
                    let (a, b, c) = self.tris[fi];
                    let (q, bary, d2) = closest_point_triangle(p, a, b, c);
                    if d2 < best.dist2 || (d2 == best.dist2 && fi < best.face) {
                        *best = SurfaceHit { face: fi, point: q, barycentric: bary, dist2: d2 };
                    }
                }
            }
            Some((l, r)) => {
                // Visit the nearer child first; prune only strictly-farther
                // boxes so ties still reach the smaller face index.
                let (nl, nr) = (&self.nodes[l], &self.nodes[r]);
                let dl = Self::box_dist2(nl.lo, nl.hi, p);
                let dr = Self::box_dist2(nr.lo, nr.hi, p);
                let order = if dl <= dr { [(dl, l), (dr, r)] } else { [(dr, r), (dl, l)] };
                for (d, c) in order {
                    if d <= best.dist2 {
                        self.query(c, p, best);
                    }
                }
            }
        }
    }
}

/// Brute-force closest surface point with the same tie rule as the BVH.
pub fn closest_point_brute_force(mesh: &TriMesh, p: [f64; 3]) -> Option<SurfaceHit> {
    let mut best: Option<SurfaceHit> = None;
    for (fi, &f) in mesh.faces.iter().enumerate() {
        let (a, b, c) = mesh.face_points(f);
        let (q, bary, d2) = closest_point_triangle(p, a, b, c);
        if best.map_or(true, |bst| d2 < bst.dist2) {
            best = Some(SurfaceHit { face: fi, point: q, barycentric: bary, dist2: d2 });
        }
    }
    best
}
