//! Staged training: filtering, freezing, batching, and metrics.

use crate::losses::{scan_loss, LossTerms, LossWeights, ScanTarget};
use crate::manifest::{epoch_seed, load_scan, sample_scan, DataFilter, Dataset, ScanData};
use crate::net::{points_to_array, Model};
use crate::{ModelError, Result};
use autodiff::{Adam, Array, Scalar, Tape};
use mesh_core::sampling::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::PathBuf;

const SHUFFLE_TAG: u64 = 0x59f1;

/// One stage of the schedule: what it sees and what stays frozen.
struct StageSpec {
    filter: DataFilter,
    freeze: &'static [&'static str],
    refine: bool,
}

const STAGES: [StageSpec; 6] = [
    StageSpec {
        filter: DataFilter::Synthetic,
        freeze: &["decoder_exp/", "encoder/head_exp/"],
        refine: false,
    },
    StageSpec {
        filter: DataFilter::RealNeutral,
        freeze: &["decoder_exp/", "encoder/head_exp/"],
        refine: false,
    },
    StageSpec {
        filter: DataFilter::Synthetic,
        freeze: &["decoder_id/", "encoder/head_id/"],
        refine: false,
    },
    StageSpec {
        filter: DataFilter::RealExpressive,
        freeze: &["decoder_id/", "encoder/head_id/"],
        refine: false,
    },
    StageSpec {
        filter: DataFilter::RealAll,
        freeze: &[],
        refine: false,
    },
    StageSpec {
        filter: DataFilter::RealAll,
        freeze: &[],
        refine: true,
    },
];

pub struct TrainOptions {
    /// Receives metrics.csv, per-stage checkpoints, and model.ckpt.
    pub out_dir: PathBuf,
}

#[derive(Debug)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    /// 1-based stages skipped because their filter matched nothing.
    pub skipped_stages: Vec<usize>,
}

/// Runs the full schedule over the manifest, mutating the model in place.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    dataset: &Dataset,
    options: &TrainOptions,
) -> Result<TrainReport> {
    fs::create_dir_all(&options.out_dir)
        .map_err(|e| ModelError::io(&options.out_dir, e))?;
    let weights = LossWeights::from_config(&model.config);
    let run_seed = model.config.seed;

    // 1. Load every scan once; synthetic targets are static per scan.
    let mut data = Vec::with_capacity(dataset.scans.len());
    let mut synthetic_targets: Vec<Option<ScanTarget<S>>> = Vec::new();
    for scan in &dataset.scans {
        let loaded = load_scan(scan)?;
        let target = match (&loaded, scan.label.is_real()) {
            (ScanData::Mesh(mesh), false) => Some(ScanTarget::synthetic(mesh, &model.loss)?),
            _ => None,
        };
        synthetic_targets.push(target);
        data.push(loaded);
    }

    let metrics_path = options.out_dir.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path)
        .map_err(|e| ModelError::io(&metrics_path, e))?;
    writeln!(
        metrics,
        "stage,epoch,step,data,normal,edge,attention,boundary,total,lr"
    )
    .map_err(|e| ModelError::io(&metrics_path, e))?;

    let mut adam = Adam::new(
        model.config.lr,
        model.config.beta1,
        model.config.beta2,
        model.config.adam_eps,
    );
    let mut report = TrainReport {
        steps: 0,
        final_loss: f64::NAN,
        metrics: metrics_path.clone(),
        checkpoints: Vec::new(),
        skipped_stages: Vec::new(),
    };
    let mut warned = BTreeSet::new();
    let mut global_epoch = 0usize;

    for (stage_idx, spec) in STAGES.iter().enumerate() {
        let stage_no = stage_idx + 1;
        let epochs = model.config.stage_epochs[stage_idx];
        let idxs = dataset.indices(spec.filter);
        if idxs.is_empty() {
            log::warn!("stage {stage_no}: no {} scans, skipping", spec.filter);
            report.skipped_stages.push(stage_no);
            continue;
        }

        // 2. Freeze this stage's fixed paths, train everything else.
        model.params.set_trainable_prefix("", true);
        for prefix in spec.freeze {
            model.params.set_trainable_prefix(prefix, false);
        }
        let batch_size = if spec.refine {
            model.config.refine_batch_size
        } else {
            model.config.batch_size
        };

        for epoch in 0..epochs {
            let decays = (global_epoch / model.config.lr_decay_epochs) as i32;
            let lr = model.config.lr * model.config.lr_decay.powi(decays);
            adam.set_lr(lr);

            let mut order = idxs.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                run_seed,
                &[stage_idx as u64, epoch as u64, SHUFFLE_TAG],
            ));
            order.shuffle(&mut rng);

            for (step, chunk) in order.chunks(batch_size).enumerate() {
                let (mean, terms) = batch_step(
                    model,
                    &mut adam,
                    dataset,
                    &data,
                    &synthetic_targets,
                    &weights,
                    chunk,
                    stage_idx,
                    epoch,
                    step,
                    &mut warned,
                )?;
                writeln!(
                    metrics,
                    "{stage_no},{epoch},{step},{},{},{},{},{},{},{lr}",
                    terms.data, terms.normal, terms.edge, terms.attention, terms.boundary, mean
                )
                .map_err(|e| ModelError::io(&metrics_path, e))?;
                report.steps += 1;
                report.final_loss = mean;
            }
            global_epoch += 1;
        }

        let ckpt = options.out_dir.join(format!("stage{stage_no}.ckpt"));
        model.save(&ckpt)?;
        report.checkpoints.push(ckpt);
    }

    let final_path = options.out_dir.join("model.ckpt");
    model.save(&final_path)?;
    report.checkpoints.push(final_path);
    metrics.flush().map_err(|e| ModelError::io(&metrics_path, e))?;
    Ok(report)
}

/// One accumulated batch: forward, backward, and a single Adam update.
#[allow(clippy::too_many_arguments)]
fn batch_step<S: Scalar>(
    model: &mut Model<S>,
    adam: &mut Adam<S>,
    dataset: &Dataset,
    data: &[ScanData],
    synthetic_targets: &[Option<ScanTarget<S>>],
    weights: &LossWeights,
    chunk: &[usize],
    stage_idx: usize,
    epoch: usize,
    step: usize,
    warned: &mut BTreeSet<String>,
) -> Result<(f64, LossTerms)> {
    let mut sums: BTreeMap<String, Array<S>> = BTreeMap::new();
    let mut acc = LossTerms::default();
    let mut total = 0.0;

    for &scan_idx in chunk {
        let scan = &dataset.scans[scan_idx];
        let seed = epoch_seed(model.config.seed, stage_idx, epoch, scan_idx);
        let cloud = sample_scan(&data[scan_idx], model.config.points, seed)?;

        let real_target;
        let target = match &synthetic_targets[scan_idx] {
            Some(t) => t,
            None => {
                real_target = ScanTarget::real(&cloud);
                &real_target
            }
        };

        let arr = points_to_array::<S>(&cloud.points)?;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &arr, false)?;
        let (loss, terms) = scan_loss(
            &mut tape,
            fwd.dec.surface,
            fwd.enc.logits,
            target,
            &model.loss,
            weights,
        )?;
        if !terms.total.is_finite() {
            return Err(ModelError::NonFinite {
                stage: stage_idx + 1,
                epoch,
                step,
                batch: batch_names(dataset, chunk),
            });
        }
        if terms.chamfer_all_discarded && warned.insert(format!("chamfer:{}", scan.path.display()))
        {
            log::warn!("{}: every Chamfer term beyond sigma", scan.path.display());
        }
        if terms.missing_normals && warned.insert(format!("normals:{}", scan.path.display())) {
            log::warn!("{}: no normals, normal term skipped", scan.path.display());
        }

        let grads = tape.backward(loss)?;
        for (path, var) in &fwd.bound {
            if !model.params.get(path).map_or(false, |e| e.trainable) {
                continue;
            }
            if let Some(g) = grads.get(*var) {
                sums.entry(path.clone())
                    .and_modify(|acc| {
                        for (a, b) in acc.data.iter_mut().zip(g.data.iter()) {
                            *a += *b;
                        }
                    })
                    .or_insert_with(|| g.clone());
            }
        }

        acc.data += terms.data;
        acc.normal += terms.normal;
        acc.edge += terms.edge;
        acc.attention += terms.attention;
        acc.boundary += terms.boundary;
        total += terms.total;
    }

    // Mean over the batch, then one optimizer step per trainable buffer.
    let inv = S::from_f64(1.0 / chunk.len() as f64);
    for (path, grad) in &sums {
        let grad = grad.map(|g| g * inv);
        let entry = model.params.get_mut(path).expect("bound path");
        adam.step(path, &mut entry.value, &grad)?;
    }

    let n = chunk.len() as f64;
    acc.data /= n;
    acc.normal /= n;
    acc.edge /= n;
    acc.attention /= n;
    acc.boundary /= n;
    Ok((total / n, acc))
}

fn batch_names(dataset: &Dataset, chunk: &[usize]) -> String {
    chunk
        .iter()
        .map(|&i| dataset.scans[i].path.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
