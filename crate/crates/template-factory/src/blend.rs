//! Geodesic blending mask around the mouth region.

use mesh_core::TriMesh;

use crate::geodesic::{geodesic_ball, geodesic_distance, GeodesicField};
use crate::{Result, TemplateError};

/// Blending falloff width: the Gaussian reaches `epsilon` at distance `d`.
pub fn blending_tau(c: f64, epsilon: f64, d: f64) -> Result<f64> {
    check_constants(c, epsilon, d)?;
    Ok((d - c) / (-epsilon.ln()).sqrt())
}

/// Unclamped mask value at geodesic distance `r`: one on the plateau,
/// Gaussian falloff beyond it.
pub fn gaussian_mask(r: f64, c: f64, tau: f64) -> f64 {
    if r <= c {
        1.0
    } else {
        let s = (r - c) / tau;
        (-s * s).exp()
    }
}

/// Per-vertex blending weights and the supporting mouth region.
#[derive(Debug, Clone)]
pub struct BlendMask {
    /// Weight per vertex; one inside the plateau, zero beyond distance `d`.
    pub mask: Vec<f64>,
    /// Sorted vertices within geodesic distance `d` of the inner lips.
    pub mouth: Vec<usize>,
    pub tau: f64,
    pub field: GeodesicField,
}

/// Builds the mouth blending mask from geodesic distances to the inner lips.
pub fn build_blending_mask(
    mesh: &TriMesh,
    inner_lips: &[usize],
    c: f64,
    epsilon: f64,
    d: f64,
    t_factor: f64,
) -> Result<BlendMask> {
    let tau = blending_tau(c, epsilon, d)?;
    let field = geodesic_distance(mesh, inner_lips, t_factor)?;
    let mouth = geodesic_ball(&field, d)?;
    let mask = field
        .distance
        .iter()
        .map(|&r| if r > d { 0.0 } else { gaussian_mask(r, c, tau) })
        .collect();
    Ok(BlendMask { mask, mouth, tau, field })
}

fn check_constants(c: f64, epsilon: f64, d: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(TemplateError::Invalid { what: "c", msg: format!("plateau radius must be positive, got {c}") });
    }
    if !(d > c) || !d.is_finite() {
        return Err(TemplateError::Invalid {
            what: "d",
            msg: format!("support radius must exceed the plateau radius {c}, got {d}"),
        });
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(TemplateError::Invalid {
            what: "epsilon",
            msg: format!("falloff target must lie in (0, 1), got {epsilon}"),
        });
    }
    Ok(())
}
