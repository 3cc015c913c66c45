//! End-to-end template preparation from a generated dataset.

use mesh_core::io::{parse_landmarks, parse_mesh, parse_vertex_set};
use template_factory::synth::{generate, SynthOptions};
use template_factory::{build_bundle, BundleConfig, PcaBasis, TemplateBundle};

#[test]
fn generated_dataset_builds_a_working_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        nx: 21,
        ny: 29,
        subjects: 2,
        expressions: 1,
        synthetic: 2,
        clouds: 0,
        id_components: 5,
        exp_components: 4,
        id_samples: 10,
        exp_samples: 9,
        seed: 3,
        ..SynthOptions::default()
    };
    let paths = generate(dir.path(), &opts).unwrap();

    // 1. Reload everything from disk, the way the preparation step would.
    let template = parse_mesh(&paths.template).unwrap();
    let lips = parse_vertex_set(&paths.inner_lips).unwrap();
    let crop = parse_vertex_set(&paths.boundary_crop).unwrap();
    let landmarks = parse_landmarks(&paths.landmarks).unwrap();
    let pca_id = PcaBasis::load(&paths.pca_id).unwrap();
    let pca_exp = PcaBasis::load(&paths.pca_exp).unwrap();

    let config = BundleConfig { levels: 2, factor: 4, kernels: vec![8, 4], ..BundleConfig::default() };
    let bundle =
        build_bundle(&template, &lips, &crop, &landmarks, pca_id, pca_exp, config).unwrap();

    // 2. Structural invariants of the prepared bundle.
    let sizes: Vec<usize> = bundle.hierarchy.levels.iter().map(|m| m.vertices.len()).collect();
    assert_eq!(sizes[0], 21 * 29);
    assert_eq!(sizes.len(), 3);
    assert!(sizes[1] <= sizes[0] / 3 && sizes[2] <= sizes[1] / 3);
    assert_eq!(bundle.hierarchy.kernels, vec![4, 8]);
    assert_eq!(bundle.pca_id.rows, 3 * bundle.mouth_region.len());
    for &v in &bundle.inner_lips {
        assert_eq!(bundle.mouth_mask[v], 1.0, "lip vertex {v} not on the plateau");
    }
    let support: Vec<usize> =
        (0..sizes[0]).filter(|&v| bundle.mouth_mask[v] > 0.0).collect();
    assert_eq!(support, bundle.mouth_region);

    // 3. Round trip through disk.
    let path = dir.path().join("template.smf");
    bundle.save(&path).unwrap();
    let back = TemplateBundle::load(&path).unwrap();
    assert_eq!(back.landmarks, bundle.landmarks);
    assert_eq!(back.mouth_region, bundle.mouth_region);
    assert_eq!(back.hierarchy.spirals, bundle.hierarchy.spirals);
}
