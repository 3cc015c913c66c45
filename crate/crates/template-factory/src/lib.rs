//! Template asset construction: geodesic distance fields, the decimation
//! hierarchy with barycentric upsamplers, spiral neighbor enumeration, the
//! blended mouth model, PCA bases and bundle serialization.

pub mod blend;
pub mod bundle;
mod container;
pub mod decimate;
pub mod geodesic;
pub mod hierarchy;
pub mod pca;
pub mod spiral;
pub mod synth;
pub mod upsample;

pub use blend::{blending_tau, build_blending_mask, gaussian_mask, BlendMask};
pub use bundle::{build_bundle, BundleConfig, TemplateBundle};
pub use decimate::{decimate, Decimation};
pub use geodesic::{geodesic_ball, geodesic_distance, GeodesicField};
pub use hierarchy::{build_hierarchy, Hierarchy};
pub use pca::PcaBasis;
pub use spiral::spiral_sequences;
pub use upsample::build_upsampler;

use thiserror::Error;

/// Errors raised while building or loading template assets.
#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error(
        "mesh is disconnected: vertex {vertex} cannot be reached from vertex {from} \
         (component has {reachable} of {total} vertices)"
    )]
    Disconnected { vertex: usize, from: usize, reachable: usize, total: usize },

    #[error("linear system is singular while {what}: pivot {pivot:.3e} at row {row}")]
    Singular { what: &'static str, row: usize, pivot: f64 },

    #[error("vertex {vertex} is non-manifold: {msg}")]
    NonManifold { vertex: usize, msg: String },

    #[error("decimation target {target} must be at least 3 and smaller than the current vertex count {current}")]
    DecimationTarget { target: usize, current: usize },

    #[error("{path}: format error: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Mesh(#[from] mesh_core::MeshError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TemplateError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        TemplateError::Io { path: path.display().to_string(), source }
    }

    pub(crate) fn format(path: &std::path::Path, msg: impl Into<String>) -> Self {
        TemplateError::Format { path: path.display().to_string(), msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, TemplateError>;
