//! Statistical oracles for the samplers: chi-square goodness of fit for
//! area-proportional face selection and for uniform point selection.

use mesh_core::mesh::{PointCloud, TriMesh};
use mesh_core::sampling::{sample_surface, select_points};
use mesh_core::vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Irregular fan of `n` triangles around the origin with varied areas.
fn fan_mesh(n: usize, seed: u64) -> TriMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = vec![[0.0, 0.0, 0.0]];
    let mut faces = Vec::new();
    for i in 0..=n {
        let a = i as f64 / n as f64 * std::f64::consts::PI; // half fan, no wraparound
        let r = 0.5 + rng.gen::<f64>() * 2.0;
        vertices.push([r * a.cos(), r * a.sin(), 0.0]);
    }
    for i in 0..n {
        faces.push([0, i + 1, i + 2]);
    }
    TriMesh::new(vertices, faces).unwrap()
}

fn face_areas(mesh: &TriMesh) -> Vec<f64> {
    mesh.faces
        .iter()
        .map(|&f| {
            let (a, b, c) = mesh.face_points(f);
            vec3::triangle_area(a, b, c)
        })
        .collect()
}

/// Pearson chi-square p-value for observed counts against expected counts.
fn chi_square_p(observed: &[usize], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum();
    let df = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

/// Classifies each sample to the fan wedge containing its angle.
fn count_per_face(mesh: &TriMesh, cloud: &PointCloud) -> Vec<usize> {
    let n = mesh.faces.len();
    let mut counts = vec![0usize; n];
    for p in &cloud.points {
        let ang = p[1].atan2(p[0]).rem_euclid(std::f64::consts::PI);
        // Wedge boundaries are the vertex angles.
        let mut fi = n - 1;
        for i in 0..n {
            let a1 = mesh.vertices[i + 2][1].atan2(mesh.vertices[i + 2][0]).rem_euclid(std::f64::consts::PI + 1e-12);
            if ang <= a1 + 1e-12 {
                fi = i;
                break;
            }
        }
        counts[fi] += 1;
    }
    counts
}

#[test]
fn face_selection_is_area_proportional() {
    let mesh = fan_mesh(50, 99);
    let areas = face_areas(&mesh);
    let total: f64 = areas.iter().sum();
    let n = 100_000;
    let cloud = sample_surface(&mesh, n, 12345).unwrap();
    let counts = count_per_face(&mesh, &cloud);
    let expected: Vec<f64> = areas.iter().map(|a| a / total * n as f64).collect();
    let p = chi_square_p(&counts, &expected);
    assert!(p > 0.01, "chi-square p-value {p} too small");
}

#[test]
fn point_selection_is_uniform() {
    // With replacement (n > cloud size): counts should be uniform.
    let cloud = PointCloud {
        points: (0..40).map(|i| [i as f64, 0.0, 0.0]).collect(),
        normals: None,
    };
    let n = 80_000;
    let sel = select_points(&cloud, n, 777).unwrap();
    let mut counts = vec![0usize; 40];
    for p in &sel.points {
        counts[p[0] as usize] += 1;
    }
    let expected = vec![n as f64 / 40.0; 40];
    let p = chi_square_p(&counts, &expected);
    assert!(p > 0.01, "chi-square p-value {p} too small");
}

#[test]
fn selection_without_replacement_is_unbiased_over_seeds() {
    // Drawing 10 of 50 across many seeds: every index should appear with
    // equal frequency.
    let cloud = PointCloud {
        points: (0..50).map(|i| [i as f64, 0.0, 0.0]).collect(),
        normals: None,
    };
    let mut counts = vec![0usize; 50];
    let rounds = 8000;
    for seed in 0..rounds {
        let sel = select_points(&cloud, 10, seed).unwrap();
        for p in &sel.points {
            counts[p[0] as usize] += 1;
        }
    }
    let expected = vec![rounds as f64 * 10.0 / 50.0; 50];
    let p = chi_square_p(&counts, &expected);
    assert!(p > 0.01, "chi-square p-value {p} too small");
}
