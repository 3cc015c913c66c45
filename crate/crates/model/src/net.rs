//! Model assembly: parameters, template constants, and checkpoints.

use crate::config::ModelConfig;
use crate::decoder::{assemble, AssembleVars, Registration};
use crate::encoder::{encode, head, latent_code, EncoderVars, LatentCode};
use crate::losses::LossConsts;
use crate::{ModelError, Result};
use autodiff::{checkpoint, Array, ModelParams, Scalar, Sparse, Tape, Var};
use mesh_core::sampling::mix_seed;
use mesh_core::TriMesh;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use template_factory::TemplateBundle;

/// Template-derived constants the decoder graphs reuse every step.
pub struct NetConsts<S: Scalar> {
    /// Vertex count per hierarchy level, finest first.
    pub level_sizes: Vec<usize>,
    /// Spiral length per convolution level.
    pub kernels: Vec<usize>,
    /// `upsamplers[l]` maps level l+1 features onto level l.
    pub upsamplers: Vec<Arc<Sparse<S>>>,
    /// Flattened spiral tables, `kernels[l]` entries per vertex.
    pub spirals: Vec<Arc<Vec<usize>>>,
    /// Template vertices, (N, 3).
    pub mu: Array<S>,
    pub mouth_rows: Arc<Vec<usize>>,
    /// Blending weight per mouth coordinate, (3M, 1).
    pub mask_rep: Array<S>,
    pub basis_id: Array<S>,
    pub basis_id_t: Array<S>,
    pub basis_exp: Array<S>,
    pub basis_exp_t: Array<S>,
}

impl<S: Scalar> NetConsts<S> {
    pub fn build(config: &ModelConfig, bundle: &TemplateBundle) -> Result<Self> {
        let h = &bundle.hierarchy;
        let n_levels = h.n_levels();
        if config.block_widths.len() != n_levels {
            return Err(ModelError::Config {
                key: "block_widths".into(),
                msg: format!(
                    "{} widths for a hierarchy of {n_levels} levels",
                    config.block_widths.len()
                ),
            });
        }
        let level_sizes: Vec<usize> = h.levels.iter().map(|m| m.vertices.len()).collect();

        let mut upsamplers = Vec::with_capacity(n_levels);
        for (l, csr) in h.upsamplers.iter().enumerate() {
            if csr.n_rows != level_sizes[l] || csr.n_cols != level_sizes[l + 1] {
                return Err(ModelError::Invalid {
                    what: "upsampler",
                    msg: format!(
                        "level {l} is ({}, {}), hierarchy wants ({}, {})",
                        csr.n_rows,
                        csr.n_cols,
                        level_sizes[l],
                        level_sizes[l + 1]
                    ),
                });
            }
            let mut triplets = Vec::with_capacity(csr.values.len());
            for r in 0..csr.n_rows {
                for e in csr.indptr[r]..csr.indptr[r + 1] {
                    triplets.push((r, csr.indices[e], S::from_f64(csr.values[e])));
                }
            }
            upsamplers.push(Arc::new(Sparse::from_triplets(
                csr.n_rows,
                csr.n_cols,
                &triplets,
            )?));
        }

        let mut spirals = Vec::with_capacity(n_levels);
        for l in 0..n_levels {
            let rows = &h.spirals[l];
            let k = h.kernels[l];
            if rows.len() != level_sizes[l] {
                return Err(ModelError::Invalid {
                    what: "spirals",
                    msg: format!("level {l} has {} rows for {} vertices", rows.len(), level_sizes[l]),
                });
            }
            let mut flat = Vec::with_capacity(rows.len() * k);
            for (v, row) in rows.iter().enumerate() {
                if row.len() != k || row[0] != v {
                    return Err(ModelError::Invalid {
                        what: "spirals",
                        msg: format!("level {l} vertex {v}: malformed spiral"),
                    });
                }
                flat.extend_from_slice(row);
            }
            spirals.push(Arc::new(flat));
        }

        let template = bundle.template();
        let flat: Vec<f64> = template.vertices.iter().flatten().copied().collect();
        let mu = Array::from_f64_vec(template.vertices.len(), 3, &flat)?;

        // Mouth constants: coordinate-replicated mask and the two bases.
        let m = bundle.mouth_region.len();
        let mut mask = Vec::with_capacity(3 * m);
        for &v in &bundle.mouth_region {
            let w = bundle.mouth_mask[v];
            mask.extend_from_slice(&[w, w, w]);
        }
        let mask_rep = Array::from_f64_vec(3 * m, 1, &mask)?;
        let (basis_id, basis_id_t) = basis_arrays::<S>("identity", &bundle.pca_id, m)?;
        let (basis_exp, basis_exp_t) = basis_arrays::<S>("expression", &bundle.pca_exp, m)?;

        Ok(NetConsts {
            level_sizes,
            kernels: h.kernels.clone(),
            upsamplers,
            spirals,
            mu,
            mouth_rows: Arc::new(bundle.mouth_region.clone()),
            mask_rep,
            basis_id,
            basis_id_t,
            basis_exp,
            basis_exp_t,
        })
    }
}

fn basis_arrays<S: Scalar>(
    what: &str,
    pca: &template_factory::PcaBasis,
    mouth_len: usize,
) -> Result<(Array<S>, Array<S>)> {
    if pca.rows != 3 * mouth_len || pca.k() == 0 {
        return Err(ModelError::Invalid {
            what: "mouth basis",
            msg: format!(
                "{what}: {} rows and {} modes for a region of {mouth_len}",
                pca.rows,
                pca.k()
            ),
        });
    }
    let basis = Array::from_f64_vec(pca.rows, pca.k(), &pca.basis)?;
    let basis_t = basis.transpose();
    Ok((basis, basis_t))
}

/// How one parameter buffer is created.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

/// Declared shape and initializer of one parameter buffer.
#[derive(Debug, Clone)]
pub struct ShapeSpec {
    pub path: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: InitKind,
}

fn block_shapes(out: &mut Vec<ShapeSpec>, prefix: &str, fan_in: usize, width: usize) {
    out.push(ShapeSpec {
        path: format!("{prefix}/w"),
        rows: fan_in,
        cols: width,
        kind: InitKind::Uniform { fan_in },
    });
    out.push(ShapeSpec {
        path: format!("{prefix}/b"),
        rows: 1,
        cols: width,
        kind: InitKind::Zeros,
    });
    out.push(ShapeSpec {
        path: format!("{prefix}/gamma"),
        rows: 1,
        cols: width,
        kind: InitKind::Ones,
    });
    out.push(ShapeSpec {
        path: format!("{prefix}/beta"),
        rows: 1,
        cols: width,
        kind: InitKind::Zeros,
    });
}

fn linear_shapes(out: &mut Vec<ShapeSpec>, prefix: &str, fan_in: usize, width: usize) {
    out.push(ShapeSpec {
        path: format!("{prefix}/w"),
        rows: fan_in,
        cols: width,
        kind: InitKind::Uniform { fan_in },
    });
    out.push(ShapeSpec {
        path: format!("{prefix}/b"),
        rows: 1,
        cols: width,
        kind: InitKind::Zeros,
    });
}

/// Parameter layout of the encoder for a given configuration.
pub fn encoder_shapes(config: &ModelConfig) -> Vec<ShapeSpec> {
    let mut out = Vec::new();
    let mut fan_in = 3;
    for (i, &w) in config.trunk_widths.iter().enumerate() {
        block_shapes(&mut out, &format!("encoder/trunk{i}"), fan_in, w);
        fan_in = w;
    }
    let feat = *config.trunk_widths.last().expect("validated");
    if config.attention {
        let mut a_in = feat;
        for (i, &w) in config.att_widths.iter().enumerate() {
            block_shapes(&mut out, &format!("encoder/att{i}"), a_in, w);
            a_in = w;
        }
        linear_shapes(&mut out, "encoder/att_out", a_in, 1);
    }
    linear_shapes(&mut out, "encoder/head_id", feat, config.d_id);
    linear_shapes(&mut out, "encoder/head_exp", feat, config.d_exp);
    out
}

/// Parameter layout of one decoder over the given hierarchy.
pub fn decoder_shapes(
    config: &ModelConfig,
    prefix: &str,
    latent_dim: usize,
    level_sizes: &[usize],
    kernels: &[usize],
) -> Vec<ShapeSpec> {
    let mut out = Vec::new();
    let n_levels = kernels.len();
    let n_top = level_sizes[n_levels];
    linear_shapes(
        &mut out,
        &format!("{prefix}/seed"),
        latent_dim,
        n_top * config.seed_width,
    );

    let mut w_in = config.seed_width;
    for (p, &w_out) in config.block_widths.iter().enumerate() {
        let l = n_levels - 1 - p;
        let conv_in = kernels[l] * w_in;
        linear_shapes(&mut out, &format!("{prefix}/block{p}/conv"), conv_in, w_out);
        linear_shapes(&mut out, &format!("{prefix}/block{p}/mix"), w_out + w_in, w_out);
        w_in = w_out;
    }
    // The output projection starts at zero so training begins from the
    // template surface.
    out.push(ShapeSpec {
        path: format!("{prefix}/out/w"),
        rows: kernels[0] * w_in,
        cols: 3,
        kind: InitKind::Zeros,
    });
    out.push(ShapeSpec {
        path: format!("{prefix}/out/b"),
        rows: 1,
        cols: 3,
        kind: InitKind::Zeros,
    });
    out
}

/// Complete parameter layout for a configuration over a hierarchy.
pub fn expected_shapes(
    config: &ModelConfig,
    level_sizes: &[usize],
    kernels: &[usize],
) -> Vec<ShapeSpec> {
    let mut out = encoder_shapes(config);
    out.extend(decoder_shapes(config, "decoder_id", config.d_id, level_sizes, kernels));
    out.extend(decoder_shapes(config, "decoder_exp", config.d_exp, level_sizes, kernels));
    out
}

/// Creates every buffer with a per-path seeded generator, so the values of
/// one parameter never depend on which others exist.
pub fn init_params<S: Scalar>(shapes: &[ShapeSpec], seed: u64) -> ModelParams<S> {
    let mut params = ModelParams::new();
    for spec in shapes {
        let value = match spec.kind {
            InitKind::Uniform { fan_in } => {
                let mut state = mix_seed(seed, 0x5eed_1a17);
                for b in spec.path.bytes() {
                    state = mix_seed(state, b as u64);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(state);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data: Vec<S> = (0..spec.rows * spec.cols)
                    .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
                    .collect();
                Array::from_vec(spec.rows, spec.cols, data).expect("shape")
            }
            InitKind::Ones => {
                Array::from_vec(spec.rows, spec.cols, vec![S::one(); spec.rows * spec.cols])
                    .expect("shape")
            }
            InitKind::Zeros => Array::zeros(spec.rows, spec.cols),
        };
        params.insert(spec.path.clone(), value, true);
    }
    params
}

fn validate_params<S: Scalar>(params: &ModelParams<S>, expected: &[ShapeSpec]) -> Result<()> {
    let mut problems = Vec::new();
    let mut known = BTreeMap::new();
    for spec in expected {
        known.insert(spec.path.as_str(), ());
        match params.get(&spec.path) {
            None => problems.push(format!("missing {} ({}, {})", spec.path, spec.rows, spec.cols)),
            Some(entry) => {
                let (r, c) = entry.value.shape();
                if (r, c) != (spec.rows, spec.cols) {
                    problems.push(format!(
                        "{}: checkpoint has ({r}, {c}), bundle wants ({}, {})",
                        spec.path, spec.rows, spec.cols
                    ));
                }
            }
        }
    }
    for (path, _) in params.iter() {
        if !known.contains_key(path.as_str()) {
            problems.push(format!("unexpected {path}"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ModelError::Mismatch(problems.join("\n")))
    }
}

/// Graph handles for one full forward pass.
pub struct ForwardVars {
    pub bound: BTreeMap<String, Var>,
    pub enc: EncoderVars,
    pub dec: AssembleVars,
}

/// The registration model: configuration, parameters, template constants.
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub params: ModelParams<S>,
    pub consts: NetConsts<S>,
    pub loss: LossConsts<S>,
    pub template: TriMesh,
}

impl<S: Scalar> Model<S> {
    /// Fresh model with seeded parameters over the given template bundle.
    pub fn new(config: ModelConfig, bundle: &TemplateBundle) -> Result<Self> {
        config.validate()?;
        let consts = NetConsts::build(&config, bundle)?;
        let loss = LossConsts::build(bundle)?;
        let shapes = expected_shapes(&config, &consts.level_sizes, &consts.kernels);
        let params = init_params(&shapes, config.seed);
        Ok(Model {
            config,
            params,
            consts,
            loss,
            template: bundle.template().clone(),
        })
    }

    /// Builds the full encode-decode graph over one point array.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        points: &Array<S>,
        bypass_attention: bool,
    ) -> Result<ForwardVars> {
        let bound = self.params.bind_all(tape);
        let p = tape.constant(points.clone());
        let enc = encode(tape, &bound, &self.config, p, bypass_attention)?;
        let dec = assemble(tape, &bound, &self.consts, enc.z_id, enc.z_exp)?;
        Ok(ForwardVars { bound, enc, dec })
    }

    pub fn encode_points(&self, points: &[[f64; 3]]) -> Result<LatentCode> {
        let arr = points_to_array::<S>(points)?;
        let mut tape = Tape::new();
        let bound = self.params.bind_all(&mut tape);
        let p = tape.constant(arr);
        let enc = encode(&mut tape, &bound, &self.config, p, false)?;
        Ok(latent_code(&tape, &enc))
    }

    /// Registers a point cloud: encode, decode, assemble the surface.
    pub fn register_points(&self, points: &[[f64; 3]]) -> Result<Registration> {
        let arr = points_to_array::<S>(points)?;
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &arr, false)?;
        let latent = latent_code(&tape, &fwd.enc);
        let mesh = self.surface_mesh(&tape, fwd.dec.surface)?;
        Ok(Registration { mesh, latent })
    }

    /// Decodes explicit latent vectors into a surface.
    pub fn decode_latents(&self, z_id: &[f64], z_exp: &[f64]) -> Result<TriMesh> {
        if z_id.len() != self.config.d_id || z_exp.len() != self.config.d_exp {
            return Err(ModelError::Invalid {
                what: "latents",
                msg: format!(
                    "got {}/{} dims, model wants {}/{}",
                    z_id.len(),
                    z_exp.len(),
                    self.config.d_id,
                    self.config.d_exp
                ),
            });
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_all(&mut tape);
        let zi = tape.constant(Array::from_f64_vec(1, z_id.len(), z_id)?);
        let ze = tape.constant(Array::from_f64_vec(1, z_exp.len(), z_exp)?);
        let dec = assemble(&mut tape, &bound, &self.consts, zi, ze)?;
        self.surface_mesh(&tape, dec.surface)
    }

    /// Maps a joint latent through both heads, with the usual normalization.
    pub fn heads_from_joint(&self, z_joint: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let feat = *self.config.trunk_widths.last().expect("validated");
        if z_joint.len() != feat {
            return Err(ModelError::Invalid {
                what: "joint latent",
                msg: format!("got {} dims, model wants {feat}", z_joint.len()),
            });
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_all(&mut tape);
        let z = tape.constant(Array::from_f64_vec(1, feat, z_joint)?);
        let zi = head(&mut tape, &bound, z, "encoder/head_id")?;
        let ze = head(&mut tape, &bound, z, "encoder/head_exp")?;
        Ok((tape.value(zi).to_f64_vec(), tape.value(ze).to_f64_vec()))
    }

    fn surface_mesh(&self, tape: &Tape<S>, surface: Var) -> Result<TriMesh> {
        let v = tape.value(surface);
        let vertices: Vec<[f64; 3]> = (0..v.rows)
            .map(|r| [v.at(r, 0).as_f64(), v.at(r, 1).as_f64(), v.at(r, 2).as_f64()])
            .collect();
        Ok(TriMesh::new(vertices, self.template.faces.clone())?)
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Totals per parameter family, for reporting.
    pub fn param_groups(&self) -> Vec<(String, usize)> {
        ["encoder/", "decoder_id/", "decoder_exp/"]
            .iter()
            .map(|p| (p.trim_end_matches('/').to_string(), self.params.param_count_prefix(p)))
            .collect()
    }

    /// Writes parameters plus the configuration and hierarchy fingerprint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map = serde_json::Map::new();
        for (k, v) in self.config.entries() {
            map.insert(k, serde_json::Value::String(v));
        }
        let meta = serde_json::json!({
            "config": map,
            "level_sizes": self.consts.level_sizes,
            "kernels": self.consts.kernels,
        });
        Ok(checkpoint::save(path, &self.params, &meta)?)
    }

    /// Reads a checkpoint and validates it against the bundle's layout.
    pub fn load(path: &Path, bundle: &TemplateBundle) -> Result<Self> {
        let (params, meta) = checkpoint::load::<S>(path)?;
        let obj = meta
            .get("config")
            .and_then(|v| v.as_object())
            .ok_or_else(|| ModelError::Invalid {
                what: "checkpoint",
                msg: "missing config block".into(),
            })?;
        let mut config = ModelConfig::default();
        for (k, v) in obj {
            let s = v.as_str().ok_or_else(|| ModelError::Invalid {
                what: "checkpoint",
                msg: format!("config key {k} is not a string"),
            })?;
            config.apply(k, s)?;
        }
        config.dtype = S::DTYPE.to_string();
        config.validate()?;

        let consts = NetConsts::build(&config, bundle)?;
        let loss = LossConsts::build(bundle)?;
        let expected = expected_shapes(&config, &consts.level_sizes, &consts.kernels);
        validate_params(&params, &expected)?;
        Ok(Model {
            config,
            params,
            consts,
            loss,
            template: bundle.template().clone(),
        })
    }
}

pub(crate) fn points_to_array<S: Scalar>(points: &[[f64; 3]]) -> Result<Array<S>> {
    if points.is_empty() {
        return Err(ModelError::Invalid {
            what: "point cloud",
            msg: "no points".into(),
        });
    }
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    Ok(Array::from_f64_vec(points.len(), 3, &flat)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_stays_inside_the_parameter_budget() {
        let config = ModelConfig::default();
        let sizes = [29495usize, 7373, 1843, 460, 115];
        let kernels = [4usize, 8, 16, 32];
        let total: usize = expected_shapes(&config, &sizes, &kernels)
            .iter()
            .map(|s| s.rows * s.cols)
            .sum();
        assert!(
            (12_000_000..=19_000_000).contains(&total),
            "total {total}"
        );
    }

    #[test]
    fn init_is_deterministic_and_path_dependent() {
        let config = ModelConfig::default();
        let shapes = encoder_shapes(&config);
        let a = init_params::<f64>(&shapes, 7);
        let b = init_params::<f64>(&shapes, 7);
        let c = init_params::<f64>(&shapes, 8);
        let wa = &a.get("encoder/trunk0/w").unwrap().value;
        let wb = &b.get("encoder/trunk0/w").unwrap().value;
        let wc = &c.get("encoder/trunk0/w").unwrap().value;
        assert_eq!(wa.data, wb.data);
        assert_ne!(wa.data, wc.data);

        // Different paths with the same shape get different values.
        let t1 = &a.get("encoder/trunk1/w").unwrap().value;
        let t2 = &a.get("encoder/trunk2/w").unwrap().value;
        assert_eq!(t1.shape(), t2.shape());
        assert_ne!(t1.data, t2.data);

        // Gammas are ones, biases and betas zeros, output layers zeros.
        let g = &a.get("encoder/trunk0/gamma").unwrap().value;
        assert!(g.data.iter().all(|&x| x == 1.0));
        let z = &a.get("encoder/trunk0/b").unwrap().value;
        assert!(z.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_validation_names_every_problem() {
        let config = ModelConfig::default();
        let shapes = encoder_shapes(&config);
        let mut params = init_params::<f64>(&shapes, 7);
        // Wrong shape, a missing buffer, and an unexpected one.
        params.insert("encoder/trunk0/w", Array::zeros(2, 2), true);
        params.insert("stray/w", Array::zeros(1, 1), true);
        let err = match validate_params(&params, &shapes) {
            Err(ModelError::Mismatch(msg)) => msg,
            other => panic!("expected mismatch, got {other:?}"),
        };
        assert!(err.contains("encoder/trunk0/w"));
        assert!(err.contains("unexpected stray/w"));

        let shapes_with_extra = {
            let mut s = shapes.clone();
            s.push(ShapeSpec {
                path: "encoder/new/w".into(),
                rows: 4,
                cols: 4,
                kind: InitKind::Zeros,
            });
            s
        };
        let params = init_params::<f64>(&shapes, 7);
        let err = match validate_params(&params, &shapes_with_extra) {
            Err(ModelError::Mismatch(msg)) => msg,
            other => panic!("expected mismatch, got {other:?}"),
        };
        assert!(err.contains("missing encoder/new/w"));
    }

    #[test]
    fn decoder_seed_reshape_is_divisible() {
        let config = ModelConfig::default();
        let sizes = [200usize, 50, 13];
        let kernels = [4usize, 8];
        let mut cfg = config;
        cfg.block_widths = vec![16, 8];
        let shapes = decoder_shapes(&cfg, "decoder_id", cfg.d_id, &sizes, &kernels);
        let seed = shapes.iter().find(|s| s.path.ends_with("seed/w")).unwrap();
        assert_eq!(seed.cols % sizes[2], 0);
        assert_eq!(seed.cols / sizes[2], cfg.seed_width);
    }
}
