//! Staged training end to end: determinism, checkpoints, failure paths.

mod common;

use model::manifest::{load_scan, sample_scan, Dataset};
use model::net::Model;
use model::{train, ModelError, TrainOptions};
use std::fs;

#[test]
fn training_runs_all_stages_and_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, paths) = common::tiny_fixture(dir.path());
    let mut config = common::tiny_config();
    config.dtype = "f32".into();
    let dataset = Dataset::load(&paths.manifest).unwrap();
    assert_eq!(dataset.scans.len(), 8);

    let mut runs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let mut model = Model::<f32>::new(config.clone(), &bundle).unwrap();
        let report = train(
            &mut model,
            &dataset,
            &TrainOptions { out_dir: out.clone() },
        )
        .unwrap();

        // Stage batches: synthetic 3/2, neutral 3/2, synthetic 3/2,
        // expressive 2/2, all 5/2, refine 5/1.
        assert_eq!(report.steps, 2 + 2 + 2 + 1 + 3 + 5);
        assert!(report.skipped_stages.is_empty());
        assert!(report.final_loss.is_finite());
        assert_eq!(report.checkpoints.len(), 7);
        for ckpt in &report.checkpoints {
            assert!(ckpt.exists(), "missing {}", ckpt.display());
        }
        let metrics = fs::read_to_string(&report.metrics).unwrap();
        assert_eq!(metrics.lines().count(), 1 + report.steps);
        assert!(metrics.starts_with("stage,epoch,step,data,normal,edge,attention,boundary,total,lr"));
        runs.push((metrics, fs::read(out.join("model.ckpt")).unwrap()));
    }
    assert_eq!(runs[0].0, runs[1].0, "metrics differ between identical runs");
    assert_eq!(runs[0].1, runs[1].1, "checkpoints differ between identical runs");
}

#[test]
fn synthetic_only_manifests_skip_the_real_stages() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, paths) = common::tiny_fixture(dir.path());
    let config = common::tiny_config();
    let dataset = Dataset::load(&paths.manifest).unwrap();
    let synthetic_only = Dataset {
        scans: dataset
            .scans
            .into_iter()
            .filter(|s| !s.label.is_real())
            .collect(),
    };

    let mut model = Model::<f64>::new(config, &bundle).unwrap();
    let out = dir.path().join("synthetic-only");
    let report = train(
        &mut model,
        &synthetic_only,
        &TrainOptions { out_dir: out },
    )
    .unwrap();
    assert_eq!(report.skipped_stages, vec![2, 4, 5, 6]);
    assert_eq!(report.steps, 2 + 2);
    assert_eq!(report.checkpoints.len(), 3);
}

#[test]
fn poisoned_parameters_abort_with_the_failing_batch() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, paths) = common::tiny_fixture(dir.path());
    let config = common::tiny_config();
    let dataset = Dataset::load(&paths.manifest).unwrap();

    let mut model = Model::<f64>::new(config, &bundle).unwrap();
    model
        .params
        .get_mut("decoder_id/out/b")
        .unwrap()
        .value
        .data[0] = f64::NAN;
    let err = train(
        &mut model,
        &dataset,
        &TrainOptions { out_dir: dir.path().join("poisoned") },
    )
    .unwrap_err();
    match err {
        ModelError::NonFinite { stage, epoch, step, ref batch } => {
            assert_eq!(stage, 1);
            assert_eq!(epoch, 0);
            assert_eq!(step, 0);
            assert!(batch.contains("synth"), "batch was {batch}");
        }
        other => panic!("expected a non-finite abort, got {other}"),
    }
}

#[test]
fn frozen_stages_leave_their_parameters_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, paths) = common::tiny_fixture(dir.path());
    let mut config = common::tiny_config();
    // Stage 1 only: expression decoder and head stay frozen throughout.
    config.stage_epochs = vec![2, 0, 0, 0, 0, 0];
    let dataset = Dataset::load(&paths.manifest).unwrap();

    let mut model = Model::<f64>::new(config.clone(), &bundle).unwrap();
    let before: Vec<(String, Vec<f64>)> = model
        .params
        .iter()
        .map(|(p, e)| (p.clone(), e.value.data.clone()))
        .collect();
    train(
        &mut model,
        &dataset,
        &TrainOptions { out_dir: dir.path().join("frozen") },
    )
    .unwrap();

    let mut moved = 0usize;
    for (path, old) in before {
        let now = &model.params.get(&path).unwrap().value.data;
        let frozen = path.starts_with("decoder_exp/") || path.starts_with("encoder/head_exp/");
        let changed = old.iter().zip(now).any(|(a, b)| a.to_bits() != b.to_bits());
        if frozen {
            assert!(!changed, "{path} moved during a stage that froze it");
        } else if changed {
            moved += 1;
        }
    }
    assert!(moved > 10, "only {moved} unfrozen parameters moved");
}

#[test]
fn evaluation_pipeline_runs_on_a_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, paths) = common::tiny_fixture(dir.path());
    let config = common::tiny_config();
    let model = Model::<f64>::new(config, &bundle).unwrap();
    let dataset = Dataset::load(&paths.manifest).unwrap();

    // 1. Stability over repeated samplings of one scan.
    let scan = load_scan(&dataset.scans[0]).unwrap();
    let a = model::resampling_stability(&model, &scan, 3, 7).unwrap();
    let b = model::resampling_stability(&model, &scan, 3, 7).unwrap();
    assert!(a.median_median.is_finite() && a.median_max.is_finite());
    assert_eq!(a.median_median.to_bits(), b.median_median.to_bits());
    assert!(a.median_median <= a.median_max);

    // 2. Specificity over registrations of every real scan.
    let mut regs = Vec::new();
    for scan in dataset.scans.iter().filter(|s| s.label.is_real()) {
        let data = load_scan(scan).unwrap();
        let cloud = sample_scan(&data, model.config.points, 11).unwrap();
        regs.push(model.register_points(&cloud.points).unwrap());
    }
    assert!(regs.len() >= 2);
    let report = model::specificity(&model, &regs, 20, 5).unwrap();
    assert_eq!(report.nearest.len(), 20);
    assert!(report.specificity.is_finite());
    assert!(report.nearest.iter().all(|d| d.is_finite()));

    // 3. Landmark table against the generated annotations.
    let reg = &regs[0];
    let ann_path = paths.scans[0]
        .parent()
        .unwrap()
        .join("subj00_neutral.landmarks.txt");
    let raw = mesh_core::io::parse_annotations(&ann_path).unwrap();
    let lm = model::landmark_error(&reg.mesh, &raw, &bundle.landmarks).unwrap();
    assert!(lm.groups.contains_key("mouth") && lm.groups.contains_key("contour"));
    assert!(lm.inner_face_mean.is_finite());

    // 4. Surface error of the registration against the scan mesh.
    if let model::manifest::ScanData::Mesh(mesh) = &scan {
        let (errors, median) = model::surface_error(&reg.mesh, mesh).unwrap();
        assert_eq!(errors.len(), reg.mesh.vertices.len());
        assert!(median.is_finite() && median >= 0.0);
        let cdf = model::error_cdf(&[median], 10).unwrap();
        assert_eq!(cdf.last().unwrap().1, 1.0);
    } else {
        panic!("first scan should be a mesh");
    }
}
