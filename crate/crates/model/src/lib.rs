//! Point-cloud encoder, spiral mesh decoders, losses, training and evaluation.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod eval;
pub mod losses;
pub mod manifest;
pub mod net;
pub mod train;

pub use config::{BlockStyle, ModelConfig};
pub use decoder::Registration;
pub use encoder::LatentCode;
pub use eval::{
    error_cdf, interpolate_latents, landmark_error, resampling_stability, specificity,
    surface_error, LandmarkReport, SpecificityReport, StabilityReport,
};
pub use losses::{LossTerms, LossWeights};
pub use manifest::{Dataset, Scan, ScanKind, ScanLabel};
pub use net::Model;
pub use train::{train, TrainOptions, TrainReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config key {key}: {msg}")]
    Config { key: String, msg: String },

    #[error("{what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("checkpoint does not match the bundle:\n{0}")]
    Mismatch(String),

    #[error("manifest {path}: {msg}")]
    Manifest { path: String, msg: String },

    #[error("scan {path}: {msg}")]
    Scan { path: String, msg: String },

    #[error("non-finite loss in stage {stage}, epoch {epoch}, step {step} (batch: {batch})")]
    NonFinite { stage: usize, epoch: usize, step: usize, batch: String },

    #[error(transparent)]
    Mesh(#[from] mesh_core::MeshError),

    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),

    #[error(transparent)]
    Template(#[from] template_factory::TemplateError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ModelError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
