//! Sparse barycentric upsampling from a coarse mesh onto a finer one.

use mesh_core::sparse::Csr;
use mesh_core::spatial::TriangleBvh;
use mesh_core::TriMesh;

use crate::{Result, TemplateError};

/// Builds a sparse matrix mapping coarse vertex attributes to fine vertices.
///
/// Each fine vertex is projected onto its closest point of the coarse surface
/// and receives the barycentric weights of the enclosing triangle, so every
/// row has at most three entries summing to one.
pub fn build_upsampler(fine: &TriMesh, coarse: &TriMesh) -> Result<Csr> {
    if coarse.faces.is_empty() {
        return Err(TemplateError::Invalid {
            what: "coarse mesh",
            msg: "cannot project onto a mesh without faces".into(),
        });
    }
    let bvh = TriangleBvh::build(coarse);
    let mut triplets = Vec::with_capacity(fine.vertices.len() * 3);
    for (i, p) in fine.vertices.iter().enumerate() {
        let hit = bvh.closest_point(*p).expect("non-empty coarse mesh");
        let face = coarse.faces[hit.face];
        for (corner, w) in face.iter().zip(hit.barycentric.iter()) {
            if *w != 0.0 {
                triplets.push((i, *corner, *w));
            }
        }
    }
    Ok(Csr::from_triplets(fine.vertices.len(), coarse.vertices.len(), triplets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decimate::decimate;
    use mesh_core::shapes::icosphere;
    use mesh_core::vec3;

    #[test]
    fn identical_meshes_give_exact_unit_rows() {
        let mesh = icosphere(1, 1.0);
        let up = build_upsampler(&mesh, &mesh).unwrap();
        for i in 0..mesh.vertices.len() {
            let (cols, vals) = up.row(i);
            assert_eq!(cols, &[i]);
            assert_eq!(vals, &[1.0]);
        }
    }

    #[test]
    fn rows_are_convex_and_sum_to_one() {
        let fine = icosphere(3, 1.0);
        let coarse = decimate(&fine, 160).unwrap().mesh;
        let up = build_upsampler(&fine, &coarse).unwrap();
        assert_eq!(up.n_rows, fine.vertices.len());
        assert_eq!(up.n_cols, coarse.vertices.len());
        for i in 0..up.n_rows {
            let (cols, vals) = up.row(i);
            assert!(!cols.is_empty() && cols.len() <= 3);
            assert!(vals.iter().all(|&w| (0.0..=1.0).contains(&w)));
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn reconstruction_stays_near_the_fine_surface() {
        let fine = icosphere(3, 1.0);
        let coarse = decimate(&fine, 160).unwrap().mesh;
        let up = build_upsampler(&fine, &coarse).unwrap();
        let flat: Vec<f64> = coarse.vertices.iter().flatten().copied().collect();
        let recon = up.matmul_dense(&flat, 3);
        let diag = fine.bbox_diagonal();
        let mut total = 0.0;
        let mut max = 0.0f64;
        for (i, p) in fine.vertices.iter().enumerate() {
            let q = [recon[3 * i], recon[3 * i + 1], recon[3 * i + 2]];
            let d = vec3::dist(*p, q);
            total += d;
            max = max.max(d);
        }
        let mean = total / fine.vertices.len() as f64;
        assert!(mean < 0.02 * diag, "mean deviation {mean}");
        assert!(max < 0.08 * diag, "max deviation {max}");
    }
}
