//! Reverse-mode automatic differentiation on dense rank-2 arrays.
//!
//! The engine is a flat tape: forward construction records one node per
//! operation, `backward` sweeps the tape in reverse. The operation set is
//! exactly what a point-cloud encoder, a spiral mesh decoder and their
//! losses need; there is deliberately no general broadcasting.
//!
//! Reductions that cross the point dimension (sums, means, group-norm
//! statistics) use exact compensated summation, so forward values are
//! independent of the order in which points are laid out in memory.

pub mod adam;
pub mod array;
pub mod check;
pub mod checkpoint;
pub mod params;
pub mod scalar;
pub mod sparse;
pub mod tape;

pub use adam::Adam;
pub use array::Array;
pub use params::{ModelParams, ParamEntry};
pub use scalar::Scalar;
pub use sparse::Sparse;
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("backward: root must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },

    #[error("checkpoint {path}: io: {source}")]
    CheckpointIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
