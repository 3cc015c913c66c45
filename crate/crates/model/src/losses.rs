//! Training losses over registered surfaces.

use crate::config::ModelConfig;
use crate::{ModelError, Result};
use autodiff::{Array, Scalar, Tape, Var};
use mesh_core::mesh::{edge_set, vertex_normals};
use mesh_core::spatial::KdTree;
use mesh_core::{PointCloud, TriMesh};
use std::sync::Arc;
use template_factory::TemplateBundle;

const NORMAL_EPS: f64 = 1e-40;

/// Loss term weights and the squared-distance cutoff for matching.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_norm: f64,
    pub lambda_edge: f64,
    pub lambda_att: f64,
    pub lambda_bnd: f64,
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_norm: 1e-4,
            lambda_edge: 5e-5,
            lambda_att: 1e-4,
            lambda_bnd: 1e-3,
            sigma: 5e-4,
        }
    }
}

impl LossWeights {
    pub fn from_config(config: &ModelConfig) -> Self {
        LossWeights {
            lambda_norm: config.lambda_norm,
            lambda_edge: config.lambda_edge,
            lambda_att: config.lambda_att,
            lambda_bnd: config.lambda_bnd,
            sigma: config.sigma,
        }
    }
}

/// Fixed template geometry shared by every loss evaluation.
pub struct LossConsts<S: Scalar> {
    pub n_vertices: usize,
    pub face_a: Arc<Vec<usize>>,
    pub face_b: Arc<Vec<usize>>,
    pub face_c: Arc<Vec<usize>>,
    pub edge_i: Arc<Vec<usize>>,
    pub edge_j: Arc<Vec<usize>>,
    pub edge_len: Array<S>,
    pub edge_inv: Array<S>,
    pub crop_rows: Arc<Vec<usize>>,
    pub crop_target: Array<S>,
    pub crop_edge_i: Arc<Vec<usize>>,
    pub crop_edge_j: Arc<Vec<usize>>,
    pub crop_edge_len: Array<S>,
    pub crop_edge_inv: Array<S>,
}

impl<S: Scalar> LossConsts<S> {
    pub fn build(bundle: &TemplateBundle) -> Result<Self> {
        Self::from_template(bundle.template(), &bundle.boundary_crop)
    }

    pub fn from_template(template: &TriMesh, boundary_crop: &[usize]) -> Result<Self> {
        let n = template.vertices.len();
        let mut face_a = Vec::with_capacity(template.faces.len());
        let mut face_b = Vec::with_capacity(template.faces.len());
        let mut face_c = Vec::with_capacity(template.faces.len());
        for f in &template.faces {
            face_a.push(f[0]);
            face_b.push(f[1]);
            face_c.push(f[2]);
        }

        let edges = edge_set(template)?;
        let (edge_i, edge_j): (Vec<usize>, Vec<usize>) = edges.edges.iter().copied().unzip();
        let (edge_len, edge_inv) = length_arrays::<S>(&edges.lengths)?;

        // Boundary regularizer: the crop vertices and the edges inside them.
        let mut in_crop = vec![false; n];
        for &v in boundary_crop {
            if v >= n {
                return Err(ModelError::Invalid {
                    what: "boundary crop",
                    msg: format!("vertex {v} outside template of {n}"),
                });
            }
            in_crop[v] = true;
        }
        let crop_target_rows: Vec<f64> = boundary_crop
            .iter()
            .flat_map(|&v| template.vertices[v])
            .collect();
        let crop_target = Array::from_f64_vec(boundary_crop.len(), 3, &crop_target_rows)
            .expect("crop shape");
        let mut crop_edge_i = Vec::new();
        let mut crop_edge_j = Vec::new();
        let mut crop_lengths = Vec::new();
        for (e, &(i, j)) in edges.edges.iter().enumerate() {
            if in_crop[i] && in_crop[j] {
                crop_edge_i.push(i);
                crop_edge_j.push(j);
                crop_lengths.push(edges.lengths[e]);
            }
        }
        let (crop_edge_len, crop_edge_inv) = length_arrays::<S>(&crop_lengths)?;

        Ok(LossConsts {
            n_vertices: n,
            face_a: Arc::new(face_a),
            face_b: Arc::new(face_b),
            face_c: Arc::new(face_c),
            edge_i: Arc::new(edge_i),
            edge_j: Arc::new(edge_j),
            edge_len,
            edge_inv,
            crop_rows: Arc::new(boundary_crop.to_vec()),
            crop_target,
            crop_edge_i: Arc::new(crop_edge_i),
            crop_edge_j: Arc::new(crop_edge_j),
            crop_edge_len,
            crop_edge_inv,
        })
    }
}

fn length_arrays<S: Scalar>(lengths: &[f64]) -> Result<(Array<S>, Array<S>)> {
    if let Some(l) = lengths.iter().find(|l| **l <= 0.0 || !l.is_finite()) {
        return Err(ModelError::Invalid {
            what: "edge lengths",
            msg: format!("reference length {l} is not positive"),
        });
    }
    let len = Array::from_f64_vec(lengths.len(), 1, lengths).expect("shape");
    let inv: Vec<f64> = lengths.iter().map(|l| 1.0 / l).collect();
    let inv = Array::from_f64_vec(lengths.len(), 1, &inv).expect("shape");
    Ok((len, inv))
}

/// Ground truth for one synthetic scan in template correspondence.
pub struct SyntheticTarget<S: Scalar> {
    pub vertices: Array<S>,
    pub normals: Array<S>,
    pub normal_weight: Array<S>,
    pub valid_normals: usize,
    pub edge_len: Array<S>,
    pub edge_inv: Array<S>,
}

/// Ground truth for one real scan: points and optional per-point normals.
pub struct RealTarget {
    pub points: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
}

pub enum ScanTarget<S: Scalar> {
    Synthetic(SyntheticTarget<S>),
    Real(RealTarget),
}

impl<S: Scalar> ScanTarget<S> {
    /// Prepares a synthetic scan: its vertices, normals, and rest lengths.
    pub fn synthetic(mesh: &TriMesh, consts: &LossConsts<S>) -> Result<Self> {
        if mesh.vertices.len() != consts.n_vertices {
            return Err(ModelError::Invalid {
                what: "synthetic scan",
                msg: format!(
                    "{} vertices against a template of {}",
                    mesh.vertices.len(),
                    consts.n_vertices
                ),
            });
        }
        let flat: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
        let vertices = Array::from_f64_vec(mesh.vertices.len(), 3, &flat).expect("shape");

        let vn = vertex_normals(mesh);
        let mut normals = vec![0.0; 3 * mesh.vertices.len()];
        let mut weight = vec![0.0; mesh.vertices.len()];
        let mut valid = 0usize;
        for (v, ok) in vn.valid.iter().enumerate() {
            if *ok {
                normals[3 * v..3 * v + 3].copy_from_slice(&vn.normals[v]);
                weight[v] = 1.0;
                valid += 1;
            }
        }
        let normals = Array::from_f64_vec(mesh.vertices.len(), 3, &normals).expect("shape");
        let normal_weight =
            Array::from_f64_vec(mesh.vertices.len(), 1, &weight).expect("shape");

        let lengths: Vec<f64> = consts
            .edge_i
            .iter()
            .zip(consts.edge_j.iter())
            .map(|(&i, &j)| mesh_core::vec3::norm(mesh_core::vec3::sub(
                mesh.vertices[i],
                mesh.vertices[j],
            )))
            .collect();
        let (edge_len, edge_inv) = length_arrays::<S>(&lengths)?;

        Ok(ScanTarget::Synthetic(SyntheticTarget {
            vertices,
            normals,
            normal_weight,
            valid_normals: valid,
            edge_len,
            edge_inv,
        }))
    }

    pub fn real(cloud: &PointCloud) -> Self {
        ScanTarget::Real(RealTarget {
            points: cloud.points.clone(),
            normals: cloud.normals.clone(),
        })
    }
}

/// Chamfer value plus the matches each direction kept.
pub struct ChamferOutcome {
    pub loss: Var,
    /// Registration vertex -> cloud point, kept matches only.
    pub s_matches: Vec<(usize, usize)>,
    /// Cloud point -> registration vertex, kept matches only.
    pub p_matches: Vec<(usize, usize)>,
    pub all_discarded: bool,
}

/// Symmetric thresholded Chamfer between a surface and a point cloud.
///
/// Nearest neighbors come from a kd-tree and stay fixed inside the graph;
/// any directed term whose squared distance exceeds `sigma` is dropped.
pub fn chamfer_loss<S: Scalar>(
    tape: &mut Tape<S>,
    surface: Var,
    points: &[[f64; 3]],
    sigma: f64,
) -> Result<ChamferOutcome> {
    let (n, c) = tape.shape(surface);
    if n == 0 || c != 3 || points.is_empty() {
        return Err(ModelError::Invalid {
            what: "chamfer",
            msg: format!("surface ({n}, {c}) against {} points", points.len()),
        });
    }
    let sv: Vec<[f64; 3]> = {
        let v = tape.value(surface);
        (0..n).map(|r| [v.at(r, 0).as_f64(), v.at(r, 1).as_f64(), v.at(r, 2).as_f64()]).collect()
    };

    // 1. Fix nearest neighbors in both directions.
    let kd_points = KdTree::build(points);
    let mut s_matches = Vec::new();
    for (i, p) in sv.iter().enumerate() {
        let (j, d2) = kd_points.nearest(*p).expect("nonempty cloud");
        if d2 <= sigma {
            s_matches.push((i, j));
        }
    }
    let kd_surface = KdTree::build(&sv);
    let mut p_matches = Vec::new();
    for (k, p) in points.iter().enumerate() {
        let (i, d2) = kd_surface.nearest(*p).expect("nonempty surface");
        if d2 <= sigma {
            p_matches.push((k, i));
        }
    }

    // 2. Differentiable squared distances over the kept pairs.
    let mut terms = Vec::new();
    if !s_matches.is_empty() {
        let idx: Arc<Vec<usize>> = Arc::new(s_matches.iter().map(|&(i, _)| i).collect());
        let target: Vec<f64> = s_matches.iter().flat_map(|&(_, j)| points[j]).collect();
        let target = Array::from_f64_vec(idx.len(), 3, &target).expect("shape");
        terms.push(squared_match_sum(tape, surface, idx, target)?);
    }
    if !p_matches.is_empty() {
        let idx: Arc<Vec<usize>> = Arc::new(p_matches.iter().map(|&(_, i)| i).collect());
        let target: Vec<f64> = p_matches.iter().flat_map(|&(k, _)| points[k]).collect();
        let target = Array::from_f64_vec(idx.len(), 3, &target).expect("shape");
        terms.push(squared_match_sum(tape, surface, idx, target)?);
    }
    let all_discarded = terms.is_empty();
    let loss = match terms.len() {
        0 => tape.scalar(S::zero()),
        1 => terms[0],
        _ => tape.add(terms[0], terms[1])?,
    };
    Ok(ChamferOutcome {
        loss,
        s_matches,
        p_matches,
        all_discarded,
    })
}

fn squared_match_sum<S: Scalar>(
    tape: &mut Tape<S>,
    surface: Var,
    idx: Arc<Vec<usize>>,
    target: Array<S>,
) -> Result<Var> {
    let t = tape.constant(target);
    let g = tape.gather_rows(surface, idx)?;
    let d = tape.sub(g, t)?;
    let sq = tape.square(d);
    Ok(tape.sum_all(sq))
}

/// Sum of absolute coordinate differences against a fixed target.
pub fn l1_vertex_loss<S: Scalar>(tape: &mut Tape<S>, surface: Var, target: &Array<S>) -> Result<Var> {
    if tape.shape(surface) != target.shape() {
        return Err(ModelError::Invalid {
            what: "l1 loss",
            msg: format!("{:?} against {:?}", tape.shape(surface), target.shape()),
        });
    }
    let t = tape.constant(target.clone());
    let d = tape.sub(surface, t)?;
    let a = tape.abs(d);
    Ok(tape.sum_all(a))
}

/// Mean misalignment between surface vertex normals and target normals.
///
/// One minus the dot product is computed as half the squared difference of
/// the unit vectors, which is algebraically identical, never negative, and
/// exactly zero for bitwise-equal normals.
pub fn normal_loss<S: Scalar>(
    tape: &mut Tape<S>,
    consts: &LossConsts<S>,
    surface: Var,
    target: &Array<S>,
    weight: &Array<S>,
    valid: usize,
) -> Result<Var> {
    if valid == 0 {
        return Ok(tape.scalar(S::zero()));
    }
    let normals = surface_normals(tape, consts, surface)?;
    let t = tape.constant(target.clone());
    let w = tape.constant(weight.clone());
    let d = tape.sub(normals, t)?;
    let sq = tape.square(d);
    let per_vertex = tape.sum_cols(sq);
    let halves = tape.mul_scalar(per_vertex, S::from_f64(0.5));
    let weighted = tape.mul(w, halves)?;
    let total = tape.sum_all(weighted);
    Ok(tape.mul_scalar(total, S::from_f64(1.0 / valid as f64)))
}

/// Area-weighted unit vertex normals of the surface, in the graph.
pub fn surface_normals<S: Scalar>(
    tape: &mut Tape<S>,
    consts: &LossConsts<S>,
    surface: Var,
) -> Result<Var> {
    let (n, _) = tape.shape(surface);
    let pa = tape.gather_rows(surface, consts.face_a.clone())?;
    let pb = tape.gather_rows(surface, consts.face_b.clone())?;
    let pc = tape.gather_rows(surface, consts.face_c.clone())?;
    let e1 = tape.sub(pb, pa)?;
    let e2 = tape.sub(pc, pa)?;
    let cr = tape.cross_rows(e1, e2)?;
    let na = tape.scatter_add_rows(cr, consts.face_a.clone(), n)?;
    let nb = tape.scatter_add_rows(cr, consts.face_b.clone(), n)?;
    let nc = tape.scatter_add_rows(cr, consts.face_c.clone(), n)?;
    let s = tape.add(na, nb)?;
    let s = tape.add(s, nc)?;
    Ok(tape.normalize_rows(s, S::from_f64(NORMAL_EPS)))
}

/// Mean relative deviation of edge lengths from reference lengths.
pub fn edge_loss<S: Scalar>(
    tape: &mut Tape<S>,
    surface: Var,
    edge_i: Arc<Vec<usize>>,
    edge_j: Arc<Vec<usize>>,
    len: &Array<S>,
    inv: &Array<S>,
) -> Result<Var> {
    if edge_i.is_empty() {
        return Ok(tape.scalar(S::zero()));
    }
    let gi = tape.gather_rows(surface, edge_i)?;
    let gj = tape.gather_rows(surface, edge_j)?;
    let d = tape.sub(gi, gj)?;
    let sq = tape.square(d);
    let ssq = tape.sum_cols(sq);
    let cur = tape.sqrt(ssq);
    let l = tape.constant(len.clone());
    let li = tape.constant(inv.clone());
    let dev = tape.sub(cur, l)?;
    let rel = tape.mul(li, dev)?;
    let a = tape.abs(rel);
    Ok(tape.mean_all(a)?)
}

/// Keeps the outer rim close to the template: crop l1 plus crop edge loss.
pub fn boundary_loss<S: Scalar>(
    tape: &mut Tape<S>,
    consts: &LossConsts<S>,
    surface: Var,
) -> Result<Var> {
    if consts.crop_rows.is_empty() {
        return Ok(tape.scalar(S::zero()));
    }
    let g = tape.gather_rows(surface, consts.crop_rows.clone())?;
    let t = tape.constant(consts.crop_target.clone());
    let d = tape.sub(g, t)?;
    let a = tape.abs(d);
    let l1 = tape.sum_all(a);
    let edge = edge_loss(
        tape,
        surface,
        consts.crop_edge_i.clone(),
        consts.crop_edge_j.clone(),
        &consts.crop_edge_len,
        &consts.crop_edge_inv,
    )?;
    Ok(tape.add(l1, edge)?)
}

/// Mean binary cross entropy of the attention logits against all-ones.
pub fn attention_loss<S: Scalar>(tape: &mut Tape<S>, logits: Var) -> Result<Var> {
    let neg = tape.neg(logits);
    let sp = tape.softplus(neg);
    Ok(tape.mean_all(sp)?)
}

/// Evaluated loss decomposition for one scan.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub data: f64,
    pub normal: f64,
    pub edge: f64,
    pub attention: f64,
    pub boundary: f64,
    pub total: f64,
    /// Every Chamfer term fell beyond the cutoff.
    pub chamfer_all_discarded: bool,
    /// Real scan without normals; the normal term was skipped.
    pub missing_normals: bool,
}

/// Builds the weighted training loss for one scan and reports each term.
pub fn scan_loss<S: Scalar>(
    tape: &mut Tape<S>,
    surface: Var,
    logits: Option<Var>,
    target: &ScanTarget<S>,
    consts: &LossConsts<S>,
    weights: &LossWeights,
) -> Result<(Var, LossTerms)> {
    let mut report = LossTerms::default();
    let (data, normal, attention) = match target {
        ScanTarget::Synthetic(t) => {
            let data = l1_vertex_loss(tape, surface, &t.vertices)?;
            let normal = normal_loss(
                tape,
                consts,
                surface,
                &t.normals,
                &t.normal_weight,
                t.valid_normals,
            )?;
            let attention = match logits {
                Some(l) => attention_loss(tape, l)?,
                None => tape.scalar(S::zero()),
            };
            (data, normal, attention)
        }
        ScanTarget::Real(t) => {
            let outcome = chamfer_loss(tape, surface, &t.points, weights.sigma)?;
            report.chamfer_all_discarded = outcome.all_discarded;
            let normal = match &t.normals {
                Some(norms) => {
                    let (target_n, weight, valid) =
                        matched_normals::<S>(consts.n_vertices, &outcome.s_matches, norms);
                    normal_loss(tape, consts, surface, &target_n, &weight, valid)?
                }
                None => {
                    report.missing_normals = true;
                    tape.scalar(S::zero())
                }
            };
            (outcome.loss, normal, tape.scalar(S::zero()))
        }
    };

    let edge = match target {
        ScanTarget::Synthetic(t) => edge_loss(
            tape,
            surface,
            consts.edge_i.clone(),
            consts.edge_j.clone(),
            &t.edge_len,
            &t.edge_inv,
        )?,
        ScanTarget::Real(_) => edge_loss(
            tape,
            surface,
            consts.edge_i.clone(),
            consts.edge_j.clone(),
            &consts.edge_len,
            &consts.edge_inv,
        )?,
    };
    let boundary = boundary_loss(tape, consts, surface)?;

    // Weighted combination; the unweighted terms go into the report.
    let wn = tape.mul_scalar(normal, S::from_f64(weights.lambda_norm));
    let we = tape.mul_scalar(edge, S::from_f64(weights.lambda_edge));
    let wa = tape.mul_scalar(attention, S::from_f64(weights.lambda_att));
    let wb = tape.mul_scalar(boundary, S::from_f64(weights.lambda_bnd));
    let mut total = tape.add(data, wn)?;
    total = tape.add(total, we)?;
    total = tape.add(total, wa)?;
    total = tape.add(total, wb)?;

    report.data = tape.value(data).item().as_f64();
    report.normal = tape.value(normal).item().as_f64();
    report.edge = tape.value(edge).item().as_f64();
    report.attention = tape.value(attention).item().as_f64();
    report.boundary = tape.value(boundary).item().as_f64();
    report.total = tape.value(total).item().as_f64();
    Ok((total, report))
}

fn matched_normals<S: Scalar>(
    n_vertices: usize,
    s_matches: &[(usize, usize)],
    cloud_normals: &[[f64; 3]],
) -> (Array<S>, Array<S>, usize) {
    let mut normals = vec![0.0; 3 * n_vertices];
    let mut weight = vec![0.0; n_vertices];
    let mut valid = 0usize;
    for &(v, k) in s_matches {
        let n = cloud_normals[k];
        let sq = n[0] * n[0] + n[1] * n[1] + n[2] * n[2];
        if sq > 0.0 && sq.is_finite() {
            normals[3 * v..3 * v + 3].copy_from_slice(&n);
            weight[v] = 1.0;
            valid += 1;
        }
    }
    (
        Array::from_f64_vec(n_vertices, 3, &normals).expect("shape"),
        Array::from_f64_vec(n_vertices, 1, &weight).expect("shape"),
        valid,
    )
}
