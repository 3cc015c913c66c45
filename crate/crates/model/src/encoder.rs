//! Point-cloud encoder: shared point-net trunk, attention gate, latent heads.

use crate::config::{BlockStyle, ModelConfig};
use crate::{ModelError, Result};
use autodiff::{Array, Scalar, Tape, Var};
use std::collections::BTreeMap;

const GN_EPS: f64 = 1e-5;
const HEAD_EPS: f64 = 1e-12;

/// Latent description of one scan, as plain values.
#[derive(Debug, Clone)]
pub struct LatentCode {
    pub z_joint: Vec<f64>,
    pub z_id: Vec<f64>,
    pub z_exp: Vec<f64>,
    /// Per-point attention gate in [0, 1]; all ones when attention is off.
    pub attention: Vec<f64>,
}

/// Graph handles produced by `encode`.
pub struct EncoderVars {
    /// Per-point features after the trunk, (N, C).
    pub features: Var,
    /// Raw attention logits, (N, 1); `None` when the subnet is disabled.
    pub logits: Option<Var>,
    /// Gate applied before pooling, (N, 1).
    pub gate: Var,
    pub z_joint: Var,
    pub z_id: Var,
    pub z_exp: Var,
}

pub(crate) fn bound_var(bound: &BTreeMap<String, Var>, path: &str) -> Result<Var> {
    bound.get(path).copied().ok_or(ModelError::Invalid {
        what: "parameters",
        msg: format!("missing {path}"),
    })
}

/// One encoder block: linear, then activation and normalization in the
/// order picked by `style`.
pub fn pn_block<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    w: Var,
    b: Var,
    gamma: Var,
    beta: Var,
    group_size: usize,
    style: BlockStyle,
) -> Result<Var> {
    let (_, width) = tape.shape(w);
    if group_size == 0 || width % group_size != 0 {
        return Err(ModelError::Invalid {
            what: "encoder block",
            msg: format!("width {width} not divisible by group size {group_size}"),
        });
    }
    let h = tape.matmul(x, w)?;
    let h = tape.add_bias(h, b)?;
    let eps = S::from_f64(GN_EPS);
    match style {
        BlockStyle::Modified => {
            // 1. Activation first, statistics over group-sized channel blocks.
            let h = tape.relu(h);
            Ok(tape.group_norm(h, gamma, beta, width / group_size, eps)?)
        }
        BlockStyle::Vanilla => {
            // 2. Per-channel statistics first, then the activation.
            let h = tape.group_norm(h, gamma, beta, width, eps)?;
            Ok(tape.relu(h))
        }
    }
}

/// Builds the encoder graph over a point array already on the tape.
///
/// `bypass_attention` keeps the subnet in the graph but forces the gate to
/// ones, which matches the attention-free encoder bit for bit.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BTreeMap<String, Var>,
    config: &ModelConfig,
    points: Var,
    bypass_attention: bool,
) -> Result<EncoderVars> {
    let (n, c) = tape.shape(points);
    if c != 3 || n == 0 {
        return Err(ModelError::Invalid {
            what: "encoder input",
            msg: format!("want a nonempty (N, 3) array, got ({n}, {c})"),
        });
    }

    // 1. Shared trunk over every point.
    let mut h = points;
    for i in 0..config.trunk_widths.len() {
        h = pn_block(
            tape,
            h,
            bound_var(bound, &format!("encoder/trunk{i}/w"))?,
            bound_var(bound, &format!("encoder/trunk{i}/b"))?,
            bound_var(bound, &format!("encoder/trunk{i}/gamma"))?,
            bound_var(bound, &format!("encoder/trunk{i}/beta"))?,
            config.group_size,
            config.block_style,
        )?;
    }
    let features = h;

    // 2. Attention gate, or a constant pass-through gate.
    let ones = Array::from_vec(n, 1, vec![S::one(); n]).expect("shape");
    let (logits, gate) = if config.attention {
        let mut a = features;
        for i in 0..config.att_widths.len() {
            a = pn_block(
                tape,
                a,
                bound_var(bound, &format!("encoder/att{i}/w"))?,
                bound_var(bound, &format!("encoder/att{i}/b"))?,
                bound_var(bound, &format!("encoder/att{i}/gamma"))?,
                bound_var(bound, &format!("encoder/att{i}/beta"))?,
                config.att_group_size,
                config.block_style,
            )?;
        }
        let a = tape.matmul(a, bound_var(bound, "encoder/att_out/w")?)?;
        let logits = tape.add_bias(a, bound_var(bound, "encoder/att_out/b")?)?;
        let gate = if bypass_attention {
            tape.constant(ones)
        } else {
            tape.sigmoid(logits)
        };
        (Some(logits), gate)
    } else {
        (None, tape.constant(ones))
    };

    // 3. Gated channel-wise max pool, then the two normalized heads.
    let z_joint = tape.masked_max_pool(features, gate)?;
    let z_id = head(tape, bound, z_joint, "encoder/head_id")?;
    let z_exp = head(tape, bound, z_joint, "encoder/head_exp")?;

    Ok(EncoderVars {
        features,
        logits,
        gate,
        z_joint,
        z_id,
        z_exp,
    })
}

pub(crate) fn head<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BTreeMap<String, Var>,
    z_joint: Var,
    prefix: &str,
) -> Result<Var> {
    let h = tape.matmul(z_joint, bound_var(bound, &format!("{prefix}/w"))?)?;
    let h = tape.add_bias(h, bound_var(bound, &format!("{prefix}/b"))?)?;
    Ok(tape.normalize_rows(h, S::from_f64(HEAD_EPS)))
}

/// Reads the latent vectors out of an evaluated encoder graph.
pub fn latent_code<S: Scalar>(tape: &Tape<S>, vars: &EncoderVars) -> LatentCode {
    LatentCode {
        z_joint: tape.value(vars.z_joint).to_f64_vec(),
        z_id: tape.value(vars.z_id).to_f64_vec(),
        z_exp: tape.value(vars.z_exp).to_f64_vec(),
        attention: tape.value(vars.gate).to_f64_vec(),
    }
}
