//! Self-contained template bundles holding every precomputed registration asset.

use std::collections::BTreeMap;
use std::path::Path;

use mesh_core::sparse::Csr;
use mesh_core::TriMesh;
use serde::{Deserialize, Serialize};

use crate::blend::{blending_tau, build_blending_mask};
use crate::container::Container;
use crate::hierarchy::{build_hierarchy, Hierarchy};
use crate::pca::PcaBasis;
use crate::{Result, TemplateError};

const KIND: &str = "surfreg.bundle";

/// Geometry-processing constants baked into a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    /// Blending plateau radius.
    pub c: f64,
    /// Mask value reached at the support radius, before clamping.
    pub epsilon: f64,
    /// Blending support radius; also bounds the mouth region.
    pub d: f64,
    /// Number of decimation levels below the template.
    pub levels: usize,
    /// Approximate vertex reduction per level.
    pub factor: usize,
    /// Spiral lengths from the coarsest convolution level to the finest.
    pub kernels: Vec<usize>,
    /// Heat-method time step scale.
    pub t_factor: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            c: 3.5e-2,
            epsilon: 5e-4,
            d: 0.15,
            levels: 4,
            factor: 4,
            kernels: vec![32, 16, 8, 4],
            t_factor: 1.0,
        }
    }
}

/// Everything derived from a template mesh that registration needs.
#[derive(Debug, Clone)]
pub struct TemplateBundle {
    pub config: BundleConfig,
    pub hierarchy: Hierarchy,
    /// Blending weight per template vertex.
    pub mouth_mask: Vec<f64>,
    /// Sorted template vertices within distance `d` of the inner lips.
    pub mouth_region: Vec<usize>,
    pub inner_lips: Vec<usize>,
    pub boundary_crop: Vec<usize>,
    pub landmarks: BTreeMap<String, usize>,
    /// Identity displacement basis over the mouth region.
    pub pca_id: PcaBasis,
    /// Expression displacement basis over the mouth region.
    pub pca_exp: PcaBasis,
    pub tau: f64,
}

impl TemplateBundle {
    pub fn template(&self) -> &TriMesh {
        &self.hierarchy.levels[0]
    }
}

/// Derives all template assets and validates the statistical bases.
pub fn build_bundle(
    template: &TriMesh,
    inner_lips: &[usize],
    boundary_crop: &[usize],
    landmarks: &BTreeMap<String, usize>,
    pca_id: PcaBasis,
    pca_exp: PcaBasis,
    config: BundleConfig,
) -> Result<TemplateBundle> {
    let n = template.vertices.len();
    let inner_lips = checked_set("inner lips", inner_lips, n)?;
    let boundary_crop = checked_set("boundary crop", boundary_crop, n)?;
    for (label, &v) in landmarks {
        if v >= n {
            return Err(TemplateError::Invalid {
                what: "landmarks",
                msg: format!("landmark {label:?} references vertex {v}, template has {n}"),
            });
        }
    }

    // 1. Blending mask and mouth region from inner-lip geodesics.
    let blend = build_blending_mask(template, &inner_lips, config.c, config.epsilon, config.d, config.t_factor)?;
    let expected = 3 * blend.mouth.len();
    for (name, basis) in [("identity", &pca_id), ("expression", &pca_exp)] {
        if basis.rows != expected {
            return Err(TemplateError::Invalid {
                what: "pca basis",
                msg: format!(
                    "{name} basis has {} rows but the mouth region needs {expected} \
                     (3 coordinates for each of {} vertices)",
                    basis.rows,
                    blend.mouth.len()
                ),
            });
        }
        let err = basis.max_orthonormality_error();
        if err > 1e-8 {
            return Err(TemplateError::Invalid {
                what: "pca basis",
                msg: format!("{name} basis is not orthonormal (max deviation {err:.3e})"),
            });
        }
    }

    // 2. Decimation chain over a landmark-free copy of the template.
    let clean = TriMesh::new(template.vertices.clone(), template.faces.clone())?;
    let hierarchy = build_hierarchy(&clean, config.levels, config.factor, &config.kernels)?;

    Ok(TemplateBundle {
        tau: blend.tau,
        config,
        hierarchy,
        mouth_mask: blend.mask,
        mouth_region: blend.mouth,
        inner_lips,
        boundary_crop,
        landmarks: landmarks.clone(),
        pca_id,
        pca_exp,
    })
}

fn checked_set(what: &'static str, set: &[usize], n: usize) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(TemplateError::Invalid { what, msg: "vertex set is empty".into() });
    }
    let mut sorted: Vec<usize> = set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&v| v >= n) {
        return Err(TemplateError::Invalid { what, msg: format!("vertex {bad} out of range for {n} vertices") });
    }
    Ok(sorted)
}

impl TemplateBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let h = &self.hierarchy;
        let meta = serde_json::json!({
            "config": self.config,
            "tau": self.tau,
            "landmarks": self.landmarks,
            "n_levels": h.n_levels(),
            "level_sizes": h.levels.iter().map(|m| m.vertices.len()).collect::<Vec<_>>(),
            "kernels_per_level": h.kernels,
            "pca_id": { "rows": self.pca_id.rows, "k": self.pca_id.k() },
            "pca_exp": { "rows": self.pca_exp.rows, "k": self.pca_exp.k() },
        });
        let mut c = Container::new(KIND, meta);
        for (l, mesh) in h.levels.iter().enumerate() {
            let verts: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
            let faces: Vec<usize> = mesh.faces.iter().flatten().copied().collect();
            c.put_f64(&format!("level{l}/vertices"), &verts);
            c.put_usize(&format!("level{l}/faces"), &faces);
        }
        for (l, up) in h.upsamplers.iter().enumerate() {
            c.put_usize(&format!("up{l}/shape"), &[up.n_rows, up.n_cols]);
            c.put_usize(&format!("up{l}/indptr"), &up.indptr);
            c.put_usize(&format!("up{l}/indices"), &up.indices);
            c.put_f64(&format!("up{l}/values"), &up.values);
        }
        for (l, table) in h.spirals.iter().enumerate() {
            let flat: Vec<usize> = table.iter().flatten().copied().collect();
            c.put_usize(&format!("spiral{l}"), &flat);
        }
        for (l, anc) in h.ancestries.iter().enumerate() {
            c.put_usize(&format!("ancestry{l}"), anc);
        }
        c.put_f64("mask", &self.mouth_mask);
        c.put_usize("mouth", &self.mouth_region);
        c.put_usize("inner_lips", &self.inner_lips);
        c.put_usize("boundary_crop", &self.boundary_crop);
        c.put_f64("pca_id/basis", &self.pca_id.basis);
        c.put_f64("pca_id/sigma", &self.pca_id.sigma);
        c.put_f64("pca_exp/basis", &self.pca_exp.basis);
        c.put_f64("pca_exp/sigma", &self.pca_exp.sigma);
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<TemplateBundle> {
        let c = Container::read(path, KIND)?;
        let config: BundleConfig = serde_json::from_value(c.meta["config"].clone())
            .map_err(|e| TemplateError::format(path, format!("invalid config: {e}")))?;
        let tau = c.meta["tau"]
            .as_f64()
            .ok_or_else(|| TemplateError::format(path, "missing tau"))?;
        let landmarks: BTreeMap<String, usize> = serde_json::from_value(c.meta["landmarks"].clone())
            .map_err(|e| TemplateError::format(path, format!("invalid landmarks: {e}")))?;
        let n_levels = c.meta["n_levels"]
            .as_u64()
            .ok_or_else(|| TemplateError::format(path, "missing n_levels"))? as usize;
        let kernels_per_level: Vec<usize> = serde_json::from_value(c.meta["kernels_per_level"].clone())
            .map_err(|e| TemplateError::format(path, format!("invalid kernel list: {e}")))?;
        if kernels_per_level.len() != n_levels {
            return Err(TemplateError::format(path, "kernel list disagrees with level count"));
        }

        let mut levels = Vec::with_capacity(n_levels + 1);
        for l in 0..=n_levels {
            let verts = c.take_f64(&format!("level{l}/vertices"), path)?;
            let faces = c.take_usize(&format!("level{l}/faces"), path)?;
            if verts.len() % 3 != 0 || faces.len() % 3 != 0 {
                return Err(TemplateError::format(path, format!("level {l} arrays are not triples")));
            }
            let vertices: Vec<[f64; 3]> = verts.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            let tris: Vec<[usize; 3]> = faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            levels.push(TriMesh::new(vertices, tris)?);
        }

        let mut upsamplers = Vec::with_capacity(n_levels);
        for l in 0..n_levels {
            let shape = c.take_usize(&format!("up{l}/shape"), path)?;
            let indptr = c.take_usize(&format!("up{l}/indptr"), path)?;
            let indices = c.take_usize(&format!("up{l}/indices"), path)?;
            let values = c.take_f64(&format!("up{l}/values"), path)?;
            if shape.len() != 2
                || shape[0] != levels[l].vertices.len()
                || shape[1] != levels[l + 1].vertices.len()
                || indptr.len() != shape[0] + 1
                || indptr.last().copied() != Some(indices.len())
                || indices.len() != values.len()
                || indices.iter().any(|&j| j >= shape[1])
            {
                return Err(TemplateError::format(path, format!("upsampler {l} is inconsistent")));
            }
            upsamplers.push(Csr { n_rows: shape[0], n_cols: shape[1], indptr, indices, values });
        }

        let mut spirals = Vec::with_capacity(n_levels);
        for (l, &k) in kernels_per_level.iter().enumerate() {
            let flat = c.take_usize(&format!("spiral{l}"), path)?;
            let n = levels[l].vertices.len();
            if k == 0 || flat.len() != n * k || flat.iter().any(|&v| v >= n) {
                return Err(TemplateError::format(path, format!("spiral table {l} is inconsistent")));
            }
            spirals.push(flat.chunks_exact(k).map(|c| c.to_vec()).collect());
        }

        let mut ancestries = Vec::with_capacity(n_levels);
        for l in 0..n_levels {
            let anc = c.take_usize(&format!("ancestry{l}"), path)?;
            if anc.len() != levels[l].vertices.len() || anc.iter().any(|&a| a >= levels[l + 1].vertices.len()) {
                return Err(TemplateError::format(path, format!("ancestry {l} is inconsistent")));
            }
            ancestries.push(anc);
        }

        let n0 = levels[0].vertices.len();
        let mouth_mask = c.take_f64("mask", path)?;
        let mouth_region = c.take_usize("mouth", path)?;
        let inner_lips = c.take_usize("inner_lips", path)?;
        let boundary_crop = c.take_usize("boundary_crop", path)?;
        if mouth_mask.len() != n0
            || [&mouth_region, &inner_lips, &boundary_crop].iter().any(|s| s.iter().any(|&v| v >= n0))
        {
            return Err(TemplateError::format(path, "blending sections are inconsistent"));
        }
        let pca_id = load_basis(&c, path, "pca_id", 3 * mouth_region.len())?;
        let pca_exp = load_basis(&c, path, "pca_exp", 3 * mouth_region.len())?;

        Ok(TemplateBundle {
            config,
            hierarchy: Hierarchy { levels, upsamplers, spirals, kernels: kernels_per_level, ancestries },
            mouth_mask,
            mouth_region,
            inner_lips,
            boundary_crop,
            landmarks,
            pca_id,
            pca_exp,
            tau,
        })
    }
}

fn load_basis(c: &Container, path: &Path, name: &str, expected_rows: usize) -> Result<PcaBasis> {
    let rows = c.meta[name]["rows"]
        .as_u64()
        .ok_or_else(|| TemplateError::format(path, format!("missing {name} rows")))? as usize;
    let k = c.meta[name]["k"]
        .as_u64()
        .ok_or_else(|| TemplateError::format(path, format!("missing {name} k")))? as usize;
    let basis = c.take_f64(&format!("{name}/basis"), path)?;
    let sigma = c.take_f64(&format!("{name}/sigma"), path)?;
    if rows != expected_rows || basis.len() != rows * k || sigma.len() != k {
        return Err(TemplateError::format(path, format!("{name} sections are inconsistent")));
    }
    Ok(PcaBasis { rows, basis, sigma })
}

/// Recomputes tau for a config, validating the blending constants.
pub fn config_tau(config: &BundleConfig) -> Result<f64> {
    blending_tau(config.c, config.epsilon, config.d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mesh_core::shapes::{unit_grid, GridDiagonals};

    fn test_template() -> TriMesh {
        // Grid scaled so the default-style radii carve a proper subset.
        let grid = unit_grid(13, 17, GridDiagonals::Uniform);
        TriMesh::new(
            grid.vertices.iter().map(|p| [p[0] * 0.01, p[1] * 0.01, 0.0]).collect(),
            grid.faces.clone(),
        )
        .unwrap()
    }

    fn test_config() -> BundleConfig {
        BundleConfig {
            c: 0.01,
            epsilon: 5e-4,
            d: 0.04,
            levels: 2,
            factor: 4,
            kernels: vec![8, 4],
            t_factor: 1.0,
        }
    }

    fn fitted_basis(rows: usize, k: usize, seed: u64) -> PcaBasis {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let samples: Vec<Vec<f64>> = (0..k + 9).map(|_| (0..rows).map(|_| next()).collect()).collect();
        PcaBasis::fit(&samples, k).unwrap()
    }

    fn build_test_bundle() -> TemplateBundle {
        let template = test_template();
        let lips = vec![8 * 13 + 5, 8 * 13 + 6, 8 * 13 + 7];
        let crop: Vec<usize> = (0..13).collect();
        let mut landmarks = BTreeMap::new();
        landmarks.insert("nose_tip".to_string(), 6 * 13 + 6);
        landmarks.insert("mouth_corner".to_string(), 8 * 13 + 4);
        let cfg = test_config();
        let blend =
            build_blending_mask(&template, &lips, cfg.c, cfg.epsilon, cfg.d, cfg.t_factor).unwrap();
        let rows = 3 * blend.mouth.len();
        build_bundle(
            &template,
            &lips,
            &crop,
            &landmarks,
            fitted_basis(rows, 4, 11),
            fitted_basis(rows, 3, 23),
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn save_and_load_round_trip_exactly() {
        let bundle = build_test_bundle();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("template.smf");
        bundle.save(&path).unwrap();
        let back = TemplateBundle::load(&path).unwrap();

        assert_eq!(back.config, bundle.config);
        assert_eq!(back.tau.to_bits(), bundle.tau.to_bits());
        assert_eq!(back.landmarks, bundle.landmarks);
        assert_eq!(back.mouth_region, bundle.mouth_region);
        assert_eq!(back.inner_lips, bundle.inner_lips);
        assert_eq!(back.boundary_crop, bundle.boundary_crop);
        assert_eq!(back.hierarchy.levels.len(), bundle.hierarchy.levels.len());
        for (a, b) in back.hierarchy.levels.iter().zip(bundle.hierarchy.levels.iter()) {
            assert_eq!(a.faces, b.faces);
            assert_eq!(a.vertices.len(), b.vertices.len());
            for (p, q) in a.vertices.iter().zip(b.vertices.iter()) {
                for c in 0..3 {
                    assert_eq!(p[c].to_bits(), q[c].to_bits());
                }
            }
        }
        for (a, b) in back.hierarchy.upsamplers.iter().zip(bundle.hierarchy.upsamplers.iter()) {
            assert_eq!(a.indptr, b.indptr);
            assert_eq!(a.indices, b.indices);
            assert_eq!(a.values.len(), b.values.len());
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.hierarchy.spirals, bundle.hierarchy.spirals);
        assert_eq!(back.hierarchy.ancestries, bundle.hierarchy.ancestries);
        assert_eq!(back.hierarchy.kernels, bundle.hierarchy.kernels);
        for (x, y) in back.mouth_mask.iter().zip(bundle.mouth_mask.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in back.pca_id.basis.iter().zip(bundle.pca_id.basis.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }

        // A second save of the loaded bundle is byte-identical.
        let path2 = dir.path().join("again.smf");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn mismatched_basis_rows_are_rejected() {
        let template = test_template();
        let lips = vec![8 * 13 + 5];
        let crop = vec![0, 1, 2];
        let landmarks = BTreeMap::new();
        let err = build_bundle(
            &template,
            &lips,
            &crop,
            &landmarks,
            fitted_basis(12, 2, 3),
            fitted_basis(12, 2, 5),
            test_config(),
        )
        .unwrap_err();
        match err {
            TemplateError::Invalid { what: "pca basis", msg } => {
                assert!(msg.contains("12 rows"), "message: {msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_orthonormal_basis_is_rejected() {
        let template = test_template();
        let lips = vec![8 * 13 + 5];
        let cfg = test_config();
        let blend =
            build_blending_mask(&template, &lips, cfg.c, cfg.epsilon, cfg.d, cfg.t_factor).unwrap();
        let rows = 3 * blend.mouth.len();
        let bogus = PcaBasis { rows, basis: vec![0.5; rows * 2], sigma: vec![1.0, 0.5] };
        let err = build_bundle(&template, &lips, &[0, 1], &BTreeMap::new(), bogus, fitted_basis(rows, 2, 7), cfg)
            .unwrap_err();
        assert!(matches!(err, TemplateError::Invalid { what: "pca basis", .. }));
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        let template = test_template();
        let n = template.vertices.len();
        let cfg = test_config();
        assert!(matches!(
            build_bundle(&template, &[n], &[0], &BTreeMap::new(), fitted_basis(3, 1, 1), fitted_basis(3, 1, 2), cfg.clone()),
            Err(TemplateError::Invalid { what: "inner lips", .. })
        ));
        assert!(matches!(
            build_bundle(&template, &[0], &[], &BTreeMap::new(), fitted_basis(3, 1, 1), fitted_basis(3, 1, 2), cfg.clone()),
            Err(TemplateError::Invalid { what: "boundary crop", .. })
        ));
        let mut landmarks = BTreeMap::new();
        landmarks.insert("bad".to_string(), n + 1);
        assert!(matches!(
            build_bundle(&template, &[0], &[1], &landmarks, fitted_basis(3, 1, 1), fitted_basis(3, 1, 2), cfg),
            Err(TemplateError::Invalid { what: "landmarks", .. })
        ));
    }

    #[test]
    fn config_tau_matches_blessed_value() {
        let tau = config_tau(&BundleConfig::default()).unwrap();
        assert!((tau - 0.0417).abs() < 1e-4);
    }
}
