//! Shared fixtures: a small synthetic dataset and a matching model config.

use model::ModelConfig;
use std::path::Path;
use template_factory::synth::{generate, SynthOptions, SynthPaths};
use template_factory::{build_bundle, BundleConfig, PcaBasis, TemplateBundle};

/// Generates a 14x14 face dataset and derives its template bundle with a
/// two-level hierarchy (196 -> 49 -> 12 vertices).
pub fn tiny_fixture(dir: &Path) -> (TemplateBundle, SynthPaths) {
    let opts = SynthOptions {
        nx: 14,
        ny: 14,
        subjects: 2,
        expressions: 1,
        synthetic: 3,
        clouds: 1,
        id_components: 6,
        exp_components: 4,
        id_samples: 8,
        exp_samples: 6,
        ..Default::default()
    };
    let paths = generate(dir, &opts).expect("generate synthetic data");
    let bundle = load_bundle(&paths, 2, vec![4, 4]);
    (bundle, paths)
}

/// Builds a bundle from generated assets with the given hierarchy depth.
pub fn load_bundle(paths: &SynthPaths, levels: usize, kernels: Vec<usize>) -> TemplateBundle {
    let template = mesh_core::io::parse_mesh(&paths.template).expect("template");
    let inner = mesh_core::io::parse_vertex_set(&paths.inner_lips).expect("inner lips");
    let crop = mesh_core::io::parse_vertex_set(&paths.boundary_crop).expect("crop");
    let landmarks = mesh_core::io::parse_landmarks(&paths.landmarks).expect("landmarks");
    let pca_id = PcaBasis::load(&paths.pca_id).expect("identity basis");
    let pca_exp = PcaBasis::load(&paths.pca_exp).expect("expression basis");
    let config = BundleConfig { levels, kernels, ..Default::default() };
    build_bundle(&template, &inner, &crop, &landmarks, pca_id, pca_exp, config)
        .expect("build bundle")
}

/// Model sized for the tiny fixture: 64 points, latent 8, two conv levels.
pub fn tiny_config() -> ModelConfig {
    let mut config = ModelConfig::default();
    config.dtype = "f64".into();
    config.points = 64;
    config.d_id = 8;
    config.d_exp = 8;
    config.trunk_widths = vec![8, 8, 8, 16, 32];
    config.group_size = 4;
    config.att_widths = vec![8, 4];
    config.att_group_size = 2;
    config.seed_width = 8;
    config.block_widths = vec![8, 8];
    config.batch_size = 2;
    config.stage_epochs = vec![1, 1, 1, 1, 1, 1];
    config
}
