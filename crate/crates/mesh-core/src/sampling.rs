//! Stochastic surface sampling and point selection.
//!
//! Both operations draw from an explicitly seeded ChaCha stream, so a given
//! (input, seed) pair reproduces the same output bit for bit within one
//! build. Faces are chosen proportionally to area, positions uniformly via
//! reflected barycentric coordinates, and every sample carries the flat
//! normal of its face.

use crate::mesh::{PointCloud, TriMesh};
use crate::vec3;
use crate::MeshError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splitmix64 step, used to derive independent stream seeds from a run
/// seed and structural indices (stage, epoch, scan, ...).
pub fn mix_seed(state: u64, salt: u64) -> u64 {
    let mut z = state.wrapping_add(salt).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives one seed from a base seed and a list of indices.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = mix_seed(base, 0);
    for &p in parts {
        s = mix_seed(s, p);
    }
    s
}

/// Draws `n` points from the surface of `mesh`, area-weighted, with flat
/// per-face normals. Zero-area faces are never selected. Fails when no face
/// has positive area.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud, MeshError> {
    // Cumulative area table for proportional face selection.
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0f64;
    for &f in &mesh.faces {
        let (a, b, c) = mesh.face_points(f);
        total += vec3::triangle_area(a, b, c);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(MeshError::NoSamplableArea);
    }

    let normals: Vec<[f64; 3]> = mesh
        .faces
        .iter()
        .map(|&f| {
            let (a, b, c) = mesh.face_points(f);
            vec3::normalize(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut point_normals = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.gen::<f64>() * total;
        // partition_point returns the first face whose cumulative area
        // exceeds t; zero-area faces have an empty half-open interval.
        let fi = cumulative.partition_point(|&c| c <= t).min(mesh.faces.len() - 1);
        let (a, b, c) = mesh.face_points(mesh.faces[fi]);
        let mut u = rng.gen::<f64>();
        let mut v = rng.gen::<f64>();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = vec3::add(
            mesh.vertices[mesh.faces[fi][0]],
            vec3::add(vec3::scale(vec3::sub(b, a), u), vec3::scale(vec3::sub(c, a), v)),
        );
        points.push(p);
        point_normals.push(normals[fi]);
    }
    Ok(PointCloud { points, normals: Some(point_normals) })
}

/// Selects `n` points from a cloud: a uniform draw without replacement when
/// the cloud is large enough (a full permutation when `n` equals the cloud
/// size), with replacement otherwise.
pub fn select_points(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, MeshError> {
    if cloud.is_empty() {
        return Err(MeshError::EmptyCloud { requested: n });
    }
    let len = cloud.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if n <= len {
        // Partial Fisher-Yates over an index table.
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..n {
            let j = rng.gen_range(i..len);
            idx.swap(i, j);
        }
        idx.truncate(n);
        idx
    } else {
        (0..n).map(|_| rng.gen_range(0..len)).collect()
    };
    let points = chosen.iter().map(|&i| cloud.points[i]).collect();
    let normals = cloud
        .normals
        .as_ref()
        .map(|ns| chosen.iter().map(|&i| ns[i]).collect());
    Ok(PointCloud { points, normals })
}
