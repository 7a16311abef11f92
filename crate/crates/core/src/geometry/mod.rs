//! Poses, pinhole projection, depth back-projection and point-cloud fusion.
//!
//! Poses are camera-to-world. Depth is z-depth along the optical axis.

mod camera;
mod cloud;
mod depth;
pub mod io;
mod pose;

pub use camera::{backproject, project, project_with, PinholeCamera, CHEIRALITY_EPS};
pub use cloud::{fuse_point_cloud, PointCloud};
pub use depth::{is_valid_depth, DepthImage};
pub use pose::{pose_error, Se3Pose, WorldToCamera};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("depth must be positive and finite, got {0}")]
    InvalidDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(String),
    #[error("dimension mismatch: expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no views given")]
    NoViews,
    #[error("sampling stride must be positive")]
    InvalidStride,
    #[error("fused point cloud is empty (no valid depth)")]
    EmptyCloud,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
