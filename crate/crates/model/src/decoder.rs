//! Spiral mesh decoders plus the statistical mouth blend.

use crate::encoder::{bound_var, LatentCode};
use crate::net::NetConsts;
use crate::{ModelError, Result};
use autodiff::{Scalar, Tape, Var};
use mesh_core::TriMesh;
use std::collections::BTreeMap;

/// A registered surface with the latent code that produced it.
#[derive(Debug, Clone)]
pub struct Registration {
    pub mesh: TriMesh,
    pub latent: LatentCode,
}

/// Which statistical basis the mouth blend projects onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MouthBasis {
    Id,
    Exp,
}

/// Handles into one assembled surface graph.
pub struct AssembleVars {
    /// Raw identity displacement before the mouth blend, (N, 3).
    pub raw_id: Var,
    /// Raw expression displacement before the mouth blend, (N, 3).
    pub raw_exp: Var,
    pub blended_id: Var,
    pub blended_exp: Var,
    /// Final surface, template plus both blended displacements.
    pub surface: Var,
}

/// Decodes one latent vector into a per-vertex displacement field.
///
/// `prefix` picks the parameter family, `decoder_id` or `decoder_exp`.
pub fn decode<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BTreeMap<String, Var>,
    consts: &NetConsts<S>,
    prefix: &str,
    z: Var,
) -> Result<Var> {
    let (zr, _) = tape.shape(z);
    if zr != 1 {
        return Err(ModelError::Invalid {
            what: "decoder input",
            msg: format!("latent must be a single row, got {zr}"),
        });
    }
    let n_levels = consts.upsamplers.len();
    let n_top = consts.level_sizes[n_levels];

    // 1. Seed the coarsest level from the latent vector.
    let h = tape.matmul(z, bound_var(bound, &format!("{prefix}/seed/w"))?)?;
    let h = tape.add_bias(h, bound_var(bound, &format!("{prefix}/seed/b"))?)?;
    let (_, seeded) = tape.shape(h);
    let mut h = tape.reshape(h, n_top, seeded / n_top)?;

    // 2. Upsample and convolve towards the full template.
    for p in 0..n_levels {
        let l = n_levels - 1 - p;
        let u = tape.sparse_matmul(consts.upsamplers[l].clone(), h)?;
        let c = spiral_conv(tape, bound, consts, l, u, &format!("{prefix}/block{p}/conv"))?;
        let c = tape.elu(c);
        let cat = tape.concat_cols(c, u)?;
        let m = tape.matmul(cat, bound_var(bound, &format!("{prefix}/block{p}/mix/w"))?)?;
        let m = tape.add_bias(m, bound_var(bound, &format!("{prefix}/block{p}/mix/b"))?)?;
        h = tape.elu(m);
    }

    // 3. Project to displacement coordinates, no activation.
    spiral_conv(tape, bound, consts, 0, h, &format!("{prefix}/out"))
}

fn spiral_conv<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BTreeMap<String, Var>,
    consts: &NetConsts<S>,
    level: usize,
    x: Var,
    path: &str,
) -> Result<Var> {
    let (n, c) = tape.shape(x);
    let k = consts.kernels[level];
    let g = tape.gather_rows(x, consts.spirals[level].clone())?;
    let g = tape.reshape(g, n, k * c)?;
    let out = tape.matmul(g, bound_var(bound, &format!("{path}/w"))?)?;
    Ok(tape.add_bias(out, bound_var(bound, &format!("{path}/b"))?)?)
}

/// Pulls the mouth region towards its statistical projection.
///
/// Rows outside the region pass through untouched; inside, each coordinate
/// moves from the decoded value towards the basis reconstruction by the
/// blending weight.
pub fn mouth_blend<S: Scalar>(
    tape: &mut Tape<S>,
    consts: &NetConsts<S>,
    which: MouthBasis,
    delta: Var,
) -> Result<Var> {
    let m = consts.mouth_rows.len();
    if m == 0 {
        return Ok(delta);
    }
    let (basis, basis_t) = match which {
        MouthBasis::Id => (&consts.basis_id, &consts.basis_id_t),
        MouthBasis::Exp => (&consts.basis_exp, &consts.basis_exp_t),
    };
    let b = tape.constant(basis.clone());
    let bt = tape.constant(basis_t.clone());
    let mask = tape.constant(consts.mask_rep.clone());

    // 1. Flatten the region to one coordinate column.
    let rows = tape.gather_rows(delta, consts.mouth_rows.clone())?;
    let coords = tape.reshape(rows, 3 * m, 1)?;
    // 2. Least-squares reconstruction in the basis, then the convex mix.
    let coeff = tape.matmul(bt, coords)?;
    let proj = tape.matmul(b, coeff)?;
    let pull = tape.sub(proj, coords)?;
    let step = tape.mul(mask, pull)?;
    let blended = tape.add(coords, step)?;
    let back = tape.reshape(blended, m, 3)?;
    Ok(tape.row_replace(delta, consts.mouth_rows.clone(), back)?)
}

/// Runs both decoders and assembles the final surface.
pub fn assemble<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BTreeMap<String, Var>,
    consts: &NetConsts<S>,
    z_id: Var,
    z_exp: Var,
) -> Result<AssembleVars> {
    let raw_id = decode(tape, bound, consts, "decoder_id", z_id)?;
    let raw_exp = decode(tape, bound, consts, "decoder_exp", z_exp)?;
    let blended_id = mouth_blend(tape, consts, MouthBasis::Id, raw_id)?;
    let blended_exp = mouth_blend(tape, consts, MouthBasis::Exp, raw_exp)?;
    let mu = tape.constant(consts.mu.clone());
    let s = tape.add(mu, blended_id)?;
    let surface = tape.add(s, blended_exp)?;
    Ok(AssembleVars {
        raw_id,
        raw_exp,
        blended_id,
        blended_exp,
        surface,
    })
}
