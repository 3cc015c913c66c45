//! Finite-difference validation of the full encode/assemble/loss pipeline.

mod common;

use autodiff::{Array, Tape};
use mesh_core::io::parse_mesh;
use mesh_core::sampling::sample_surface;
use mesh_core::PointCloud;
use model::losses::{scan_loss, ScanTarget};
use model::net::Model;
use model::LossWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

struct Pipeline {
    model: Model<f64>,
    points: Array<f64>,
    synth: ScanTarget<f64>,
    real: ScanTarget<f64>,
    weights: LossWeights,
}

impl Pipeline {
    /// Combined loss over the synthetic and real branches so one gradient
    /// exercises every term.
    fn loss(&self) -> f64 {
        let mut tape = Tape::<f64>::new();
        let fwd = self.model.forward(&mut tape, &self.points, false).unwrap();
        let (a, _) = scan_loss(
            &mut tape,
            fwd.dec.surface,
            fwd.enc.logits,
            &self.synth,
            &self.model.loss,
            &self.weights,
        )
        .unwrap();
        let (b, _) = scan_loss(
            &mut tape,
            fwd.dec.surface,
            fwd.enc.logits,
            &self.real,
            &self.model.loss,
            &self.weights,
        )
        .unwrap();
        let total = tape.add(a, b).unwrap();
        tape.value(total).item()
    }
}

#[test]
fn full_pipeline_gradients_match_finite_differences() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, paths) = common::tiny_fixture(dir.path());
    let config = common::tiny_config();
    let mut model = Model::<f64>::new(config, &bundle).unwrap();

    let scan = parse_mesh(&paths.scans[0]).unwrap();
    let cloud = sample_surface(&scan, model.config.points, 99).unwrap();
    let flat: Vec<f64> = cloud.points.iter().flatten().copied().collect();
    let points = Array::from_f64_vec(cloud.points.len(), 3, &flat).unwrap();

    // Central differences need every abs kink and every nearest-neighbor
    // flip bounded away from the probe radius. Scaling and shifting the
    // synthetic target keeps |surface - target| and the relative edge
    // stretch above 1e-2 everywhere, far beyond the 1e-5 step.
    let stretched: Vec<[f64; 3]> = scan
        .vertices
        .iter()
        .map(|v| [1.05 * v[0] + 0.02, 1.05 * v[1] + 0.03, 1.05 * v[2] + 0.04])
        .collect();
    let target_mesh = mesh_core::TriMesh::new(stretched, scan.faces.clone()).unwrap();
    let synth = ScanTarget::synthetic(&target_mesh, &model.loss).unwrap();

    // A sparse lifted cloud keeps both Chamfer match directions stable;
    // normals are dropped because the matched-normal term jumps on a flip.
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let lifted: Vec<[f64; 3]> = cloud.points[..8]
        .iter()
        .map(|p| {
            [
                p[0] + rng.gen_range(-0.02..0.02),
                p[1] + rng.gen_range(-0.02..0.02),
                p[2] + 0.15 + rng.gen_range(-0.02..0.02),
            ]
        })
        .collect();
    let target_cloud = PointCloud { points: lifted, normals: None };
    let real = ScanTarget::real(&target_cloud);

    // Infinite cutoff keeps every Chamfer term alive under perturbation.
    let mut weights = LossWeights::from_config(&model.config);
    weights.sigma = f64::INFINITY;

    // 1. Analytic gradients from one backward pass.
    let mut tape = Tape::<f64>::new();
    let fwd = model.forward(&mut tape, &points, false).unwrap();
    let (a, _) =
        scan_loss(&mut tape, fwd.dec.surface, fwd.enc.logits, &synth, &model.loss, &weights)
            .unwrap();
    let (b, _) =
        scan_loss(&mut tape, fwd.dec.surface, fwd.enc.logits, &real, &model.loss, &weights)
            .unwrap();
    let total = tape.add(a, b).unwrap();
    let grads = tape.backward(total).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = fwd
        .bound
        .iter()
        .map(|(path, var)| {
            let g = grads
                .get(*var)
                .map(|g| g.data.clone())
                .unwrap_or_else(|| vec![0.0; model.params.get(path).unwrap().value.len()]);
            (path.clone(), g)
        })
        .collect();
    drop(tape);

    // 2. Central differences on a spread of entries in every parameter.
    let mut pipeline = Pipeline { model, points, synth, real, weights };
    let mut checked = 0usize;
    let mut worst: (f64, String) = (0.0, String::new());
    for (path, grad) in &analytic {
        let len = grad.len();
        let probes = [0, len / 3, len / 2, 2 * len / 3, len - 1];
        let mut seen = std::collections::BTreeSet::new();
        for &i in &probes {
            if !seen.insert(i) {
                continue;
            }
            let original = pipeline.model.params.get(path).unwrap().value.data[i];
            pipeline.model.params.get_mut(path).unwrap().value.data[i] = original + EPS;
            let up = pipeline.loss();
            pipeline.model.params.get_mut(path).unwrap().value.data[i] = original - EPS;
            let down = pipeline.loss();
            pipeline.model.params.get_mut(path).unwrap().value.data[i] = original;
            let fd = (up - down) / (2.0 * EPS);
            let an = grad[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            if err > worst.0 {
                worst = (err, format!("{path}[{i}]"));
            }
            assert!(
                err <= TOL,
                "{path}[{i}]: finite difference {fd:.9e} vs analytic {an:.9e} (rel {err:.3e})"
            );
            checked += 1;
        }
    }
    assert!(checked > 150, "only probed {checked} entries");
    println!("checked {checked} entries, worst relative error {:.3e} at {}", worst.0, worst.1);
}
