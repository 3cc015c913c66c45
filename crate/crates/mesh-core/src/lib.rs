//! Triangle-mesh and point-cloud data model with file IO, surface sampling
//! and exact spatial queries.
//!
//! Meshes are indexed triangle soups with f64 coordinates. All derived
//! quantities (normals, edge sets, samples) are deterministic functions of
//! the input; sampling additionally takes an explicit seed and reproduces
//! bit-identical output for the same seed within one build.

pub mod io;
pub mod mesh;
pub mod sampling;
pub mod shapes;
pub mod sparse;
pub mod spatial;
pub mod vec3;

pub use mesh::{EdgeSet, PointCloud, TriMesh, VertexNormals};

use thiserror::Error;

/// Errors produced by mesh parsing, validation and sampling.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}:{line}: unsupported topology: {msg}")]
    UnsupportedTopology { path: String, line: usize, msg: String },

    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },

    #[error("vertex {vertex} has a non-finite coordinate")]
    NonFiniteVertex { vertex: usize },

    #[error("edge ({a}, {b}) has zero length")]
    DegenerateEdge { a: usize, b: usize },

    #[error("mesh has no face with positive area, cannot sample the surface")]
    NoSamplableArea,

    #[error("cannot select {requested} points from an empty cloud")]
    EmptyCloud { requested: usize },

    #[error("landmark file {path}:{line}: {msg}")]
    Landmark { path: String, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MeshError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        MeshError::Io { path: path.display().to_string(), source }
    }
}
