//! Multi-resolution mesh hierarchy with upsamplers and spiral tables.

use mesh_core::sparse::Csr;
use mesh_core::TriMesh;

use crate::decimate::decimate;
use crate::spiral::spiral_sequences;
use crate::upsample::build_upsampler;
use crate::{Result, TemplateError};

/// A chain of progressively decimated meshes.
///
/// `levels[0]` is the input template; each later entry is roughly `factor`
/// times smaller. `upsamplers[l]` maps level `l + 1` vertex attributes onto
/// level `l`, `spirals[l]` holds the spiral table of level `l` with
/// `kernels[l]` entries per vertex, and `ancestries[l]` maps level `l`
/// vertices to the level `l + 1` vertex they collapsed into.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub levels: Vec<TriMesh>,
    pub upsamplers: Vec<Csr>,
    pub spirals: Vec<Vec<Vec<usize>>>,
    pub kernels: Vec<usize>,
    pub ancestries: Vec<Vec<usize>>,
}

impl Hierarchy {
    pub fn n_levels(&self) -> usize {
        self.upsamplers.len()
    }
}

/// Builds `n_levels` decimations of `template`.
///
/// `kernels` lists the spiral lengths from the coarsest convolution level to
/// the finest, matching the order the decoder applies them in.
pub fn build_hierarchy(
    template: &TriMesh,
    n_levels: usize,
    factor: usize,
    kernels: &[usize],
) -> Result<Hierarchy> {
    if n_levels == 0 {
        return Err(TemplateError::Invalid { what: "levels", msg: "need at least one level".into() });
    }
    if factor < 2 {
        return Err(TemplateError::Invalid { what: "factor", msg: format!("must be at least 2, got {factor}") });
    }
    if kernels.len() != n_levels {
        return Err(TemplateError::Invalid {
            what: "kernels",
            msg: format!("got {} kernel sizes for {n_levels} levels", kernels.len()),
        });
    }
    if kernels.iter().any(|&k| k == 0) {
        return Err(TemplateError::Invalid { what: "kernels", msg: "kernel sizes must be positive".into() });
    }

    let mut levels = vec![template.clone()];
    let mut upsamplers = Vec::with_capacity(n_levels);
    let mut ancestries = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        let fine = levels.last().unwrap();
        let target = (fine.vertices.len() / factor).max(4);
        let dec = decimate(fine, target)?;
        upsamplers.push(build_upsampler(fine, &dec.mesh)?);
        ancestries.push(dec.ancestry);
        levels.push(dec.mesh);
    }

    // Spiral tables exist at every level that runs a convolution, finest last.
    let mut per_level_kernels = vec![0usize; n_levels];
    for (i, &k) in kernels.iter().enumerate() {
        per_level_kernels[n_levels - 1 - i] = k;
    }
    let mut spirals = Vec::with_capacity(n_levels);
    for (l, &k) in per_level_kernels.iter().enumerate() {
        spirals.push(spiral_sequences(&levels[l], k)?);
    }
    Ok(Hierarchy { levels, upsamplers, spirals, kernels: per_level_kernels, ancestries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mesh_core::shapes::icosphere;
    use mesh_core::vec3;

    #[test]
    fn sphere_hierarchy_has_expected_sizes() {
        let mesh = icosphere(3, 1.0);
        let h = build_hierarchy(&mesh, 3, 4, &[16, 8, 4]).unwrap();
        let sizes: Vec<usize> = h.levels.iter().map(|m| m.vertices.len()).collect();
        assert_eq!(sizes, vec![642, 160, 40, 10]);
        assert_eq!(h.kernels, vec![4, 8, 16]);
        assert_eq!(h.n_levels(), 3);
        for l in 0..3 {
            assert_eq!(h.upsamplers[l].n_rows, sizes[l]);
            assert_eq!(h.upsamplers[l].n_cols, sizes[l + 1]);
            assert_eq!(h.ancestries[l].len(), sizes[l]);
            assert!(h.ancestries[l].iter().all(|&a| a < sizes[l + 1]));
            assert_eq!(h.spirals[l].len(), sizes[l]);
            for (v, row) in h.spirals[l].iter().enumerate() {
                assert_eq!(row.len(), h.kernels[l]);
                assert_eq!(row[0], v);
            }
        }
    }

    #[test]
    fn chained_upsampling_recovers_the_fine_surface() {
        let mesh = icosphere(3, 1.0);
        let h = build_hierarchy(&mesh, 3, 4, &[16, 8, 4]).unwrap();
        let mut attr: Vec<f64> = h.levels[3].vertices.iter().flatten().copied().collect();
        for l in (0..3).rev() {
            attr = h.upsamplers[l].matmul_dense(&attr, 3);
        }
        let diag = mesh.bbox_diagonal();
        let mut total = 0.0;
        for (i, p) in mesh.vertices.iter().enumerate() {
            total += vec3::dist(*p, [attr[3 * i], attr[3 * i + 1], attr[3 * i + 2]]);
        }
        let mean = total / mesh.vertices.len() as f64;
        assert!(mean < 0.05 * diag, "mean reconstruction error {mean}");
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let mesh = icosphere(1, 1.0);
        assert!(matches!(
            build_hierarchy(&mesh, 0, 4, &[]),
            Err(TemplateError::Invalid { what: "levels", .. })
        ));
        assert!(matches!(
            build_hierarchy(&mesh, 2, 1, &[8, 4]),
            Err(TemplateError::Invalid { what: "factor", .. })
        ));
        assert!(matches!(
            build_hierarchy(&mesh, 2, 4, &[8]),
            Err(TemplateError::Invalid { what: "kernels", .. })
        ));
        assert!(matches!(
            build_hierarchy(&mesh, 2, 4, &[8, 0]),
            Err(TemplateError::Invalid { what: "kernels", .. })
        ));
    }
}
