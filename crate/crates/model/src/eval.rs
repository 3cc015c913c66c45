//! Quantitative metrics: landmark error, surface error, stability, specificity.

use crate::decoder::Registration;
use crate::manifest::{sample_scan, ScanData};
use crate::net::Model;
use crate::{ModelError, Result};
use autodiff::scalar::exact_sum_slice;
use autodiff::Scalar;
use mesh_core::sampling::derive_seed;
use mesh_core::spatial::TriangleBvh;
use mesh_core::TriMesh;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;

/// Median and spread of one landmark group.
#[derive(Debug, Clone, Copy)]
pub struct GroupStats {
    pub median: f64,
    pub std: f64,
    pub count: usize,
}

/// Per-group landmark distances plus the pooled inner-face mean.
#[derive(Debug, Clone)]
pub struct LandmarkReport {
    pub groups: BTreeMap<String, GroupStats>,
    /// Mean distance over every group except the face contour.
    pub inner_face_mean: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityReport {
    /// Across-vertex median of per-vertex median distances to the mean.
    pub median_median: f64,
    /// Across-vertex median of per-vertex maximum distances to the mean.
    pub median_max: f64,
}

#[derive(Debug, Clone)]
pub struct SpecificityReport {
    /// Mean over samples of the nearest-registration distance.
    pub specificity: f64,
    /// One nearest-registration distance per sample.
    pub nearest: Vec<f64>,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Median with the even case averaged between the two middle values.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn group_of(label: &str) -> &str {
    label.split('_').next().unwrap_or(label)
}

/// Distances between registered landmark vertices and annotated raw points,
/// grouped by the label's leading token (nose, eye, mouth, ...).
pub fn landmark_error(
    registration: &TriMesh,
    raw: &BTreeMap<String, [f64; 3]>,
    landmark_map: &BTreeMap<String, usize>,
) -> Result<LandmarkReport> {
    if raw.is_empty() {
        return Err(ModelError::Invalid {
            what: "landmarks",
            msg: "no annotated landmarks".into(),
        });
    }
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut inner = Vec::new();
    for (label, &point) in raw {
        let &v = landmark_map.get(label).ok_or_else(|| ModelError::Invalid {
            what: "landmarks",
            msg: format!("label {label} is not in the template landmark map"),
        })?;
        if v >= registration.vertices.len() {
            return Err(ModelError::Invalid {
                what: "landmarks",
                msg: format!("{label}: vertex {v} outside the registration"),
            });
        }
        let d = dist(registration.vertices[v], point);
        let group = group_of(label);
        grouped.entry(group.to_string()).or_default().push(d);
        if group != "contour" {
            inner.push(d);
        }
    }
    let groups = grouped
        .into_iter()
        .map(|(group, mut ds)| {
            let count = ds.len();
            let mean = ds.iter().sum::<f64>() / count as f64;
            let var = ds.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / count as f64;
            let stats = GroupStats { median: median(&mut ds), std: var.sqrt(), count };
            (group, stats)
        })
        .collect();
    let inner_face_mean = if inner.is_empty() {
        0.0
    } else {
        inner.iter().sum::<f64>() / inner.len() as f64
    };
    Ok(LandmarkReport { groups, inner_face_mean })
}

/// Exact distance from every registration vertex to the raw surface,
/// plus the scan median.
pub fn surface_error(registration: &TriMesh, raw: &TriMesh) -> Result<(Vec<f64>, f64)> {
    let bvh = TriangleBvh::build(raw);
    let mut errors = Vec::with_capacity(registration.vertices.len());
    for &v in &registration.vertices {
        let hit = bvh.closest_point(v).ok_or(ModelError::Invalid {
            what: "surface_error",
            msg: "raw mesh has no triangles".into(),
        })?;
        errors.push(hit.dist2.sqrt());
    }
    let med = median(&mut errors.clone());
    Ok((errors, med))
}

/// Empirical CDF of scan medians on a uniform threshold grid over [0, max].
pub fn error_cdf(medians: &[f64], bins: usize) -> Result<Vec<(f64, f64)>> {
    if medians.is_empty() || bins == 0 {
        return Err(ModelError::Invalid {
            what: "error_cdf",
            msg: "need at least one median and one bin".into(),
        });
    }
    if medians.iter().any(|m| !m.is_finite()) {
        return Err(ModelError::Invalid {
            what: "error_cdf",
            msg: "non-finite median".into(),
        });
    }
    let mut sorted = medians.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let max = *sorted.last().expect("non-empty");
    let n = sorted.len() as f64;
    let mut out = Vec::with_capacity(bins + 1);
    for i in 0..=bins {
        let t = max * (i as f64 / bins as f64);
        let below = sorted.partition_point(|&m| m <= t);
        out.push((t, below as f64 / n));
    }
    Ok(out)
}

/// Registers a scan `n_repeats` times under fresh sampling seeds and
/// summarizes per-vertex scatter around the mean reconstruction.
pub fn resampling_stability<S: Scalar>(
    model: &Model<S>,
    scan: &ScanData,
    n_repeats: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if n_repeats < 2 {
        return Err(ModelError::Invalid {
            what: "resampling_stability",
            msg: format!("need at least 2 repeats, got {n_repeats}"),
        });
    }
    let mut repeats = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats {
        let cloud = sample_scan(scan, model.config.points, derive_seed(seed, &[r as u64]))?;
        let reg = model.register_points(&cloud.points)?;
        repeats.push(reg.mesh.vertices);
    }
    Ok(stability_stats(&repeats))
}

fn stability_stats(repeats: &[Vec<[f64; 3]>]) -> StabilityReport {
    let n_rep = repeats.len();
    let n_vert = repeats[0].len();
    let inv = 1.0 / n_rep as f64;

    // 1. Mean reconstruction; correctly rounded so repeat order cannot leak in.
    let mut mean = vec![[0.0f64; 3]; n_vert];
    let mut buf = vec![0.0f64; n_rep];
    for (v, m) in mean.iter_mut().enumerate() {
        for k in 0..3 {
            for (slot, rep) in buf.iter_mut().zip(repeats) {
                *slot = rep[v][k];
            }
            m[k] = exact_sum_slice(&buf) * inv;
        }
    }

    // 2. Per-vertex median and max distance to the mean, across repeats.
    let mut medians = Vec::with_capacity(n_vert);
    let mut maxima = Vec::with_capacity(n_vert);
    let mut ds = Vec::with_capacity(n_rep);
    for v in 0..n_vert {
        ds.clear();
        ds.extend(repeats.iter().map(|rep| dist(rep[v], mean[v])));
        maxima.push(ds.iter().cloned().fold(0.0, f64::max));
        medians.push(median(&mut ds));
    }
    StabilityReport {
        median_median: median(&mut medians),
        median_max: median(&mut maxima),
    }
}

/// Mean Euclidean distance between corresponding vertices.
fn mean_vertex_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(&p, &q)| dist(p, q)).sum();
    sum / a.len() as f64
}

/// Linear scan for the closest training registration; ties keep the first.
fn nearest_registration(mesh: &TriMesh, registrations: &[Registration]) -> f64 {
    registrations
        .iter()
        .map(|r| mean_vertex_distance(&mesh.vertices, &r.mesh.vertices))
        .fold(f64::INFINITY, f64::min)
}

/// Fits a Gaussian to the joint latents; singular covariance gets a small
/// diagonal jitter and a warning.
fn fit_gaussian(latents: &[&[f64]]) -> Result<(DVector<f64>, Cholesky<f64, nalgebra::Dyn>)> {
    let n = latents.len();
    let d = latents[0].len();
    let mut mean = DVector::zeros(d);
    for z in latents {
        for (i, &v) in z.iter().enumerate() {
            mean[i] += v / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    let scale = 1.0 / (n as f64 - 1.0);
    for z in latents {
        let c: DVector<f64> = DVector::from_iterator(d, z.iter().cloned()) - &mean;
        cov.syger(scale, &c, &c, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return Ok((mean, chol));
    }
    log::warn!("latent covariance is singular, adding 1e-8 diagonal jitter");
    for i in 0..d {
        cov[(i, i)] += 1e-8;
    }
    match Cholesky::new(cov) {
        Some(chol) => Ok((mean, chol)),
        None => Err(ModelError::Invalid {
            what: "specificity",
            msg: "covariance is not positive definite even with jitter".into(),
        }),
    }
}

/// Draws joint latents from the training Gaussian, decodes each, and
/// averages the distance to the nearest training registration.
pub fn specificity<S: Scalar>(
    model: &Model<S>,
    registrations: &[Registration],
    n_samples: usize,
    seed: u64,
) -> Result<SpecificityReport> {
    if registrations.len() < 2 {
        return Err(ModelError::Invalid {
            what: "specificity",
            msg: format!("need at least 2 registrations, got {}", registrations.len()),
        });
    }
    let d = registrations[0].latent.z_joint.len();
    let latents: Vec<&[f64]> = registrations
        .iter()
        .map(|r| r.latent.z_joint.as_slice())
        .collect();
    if latents.iter().any(|z| z.len() != d) {
        return Err(ModelError::Invalid {
            what: "specificity",
            msg: "registrations carry joint latents of different sizes".into(),
        });
    }
    let (mean, chol) = fit_gaussian(&latents)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut nearest = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let u = DVector::from_fn(d, |_, _| normal.sample(&mut rng));
        let z = &mean + chol.l() * u;
        let (z_id, z_exp) = model.heads_from_joint(z.as_slice())?;
        let mesh = model.decode_latents(&z_id, &z_exp)?;
        nearest.push(nearest_registration(&mesh, registrations));
    }
    let specificity = if nearest.is_empty() {
        0.0
    } else {
        nearest.iter().sum::<f64>() / nearest.len() as f64
    };
    Ok(SpecificityReport { specificity, nearest })
}

/// Geodesic interpolation on the unit hypersphere: normalize the chord
/// point (1−t)·z1 + t·z2. Endpoints are returned exactly.
pub fn interpolate_latents(z1: &[f64], z2: &[f64], t: f64) -> Result<Vec<f64>> {
    if z1.len() != z2.len() || z1.is_empty() {
        return Err(ModelError::Invalid {
            what: "interpolate",
            msg: format!("latent sizes {} vs {}", z1.len(), z2.len()),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(ModelError::Invalid {
            what: "interpolate",
            msg: format!("t = {t} outside [0, 1]"),
        });
    }
    if t == 0.0 {
        return Ok(z1.to_vec());
    }
    if t == 1.0 {
        return Ok(z2.to_vec());
    }
    let s = 1.0 - t;
    let mut w: Vec<f64> = z1.iter().zip(z2).map(|(&a, &b)| s * a + t * b).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-8 {
        return Err(ModelError::Invalid {
            what: "interpolate",
            msg: "degenerate midpoint of antipodal latents".into(),
        });
    }
    for v in &mut w {
        *v /= norm;
    }
    Ok(w)
}
