//! Hierarchical K-Means scene partition.
//!
//! The fused scene cloud is split into `m` clusters, each cluster again into
//! `m`, down to depth `n`. Every pixel is labelled by the path of child slots
//! that leads to its leaf, and each leaf is finally summarized by up to `q`
//! K-Means centers that serve as its candidate 3D coordinates.

mod io;
mod kmeans;
mod tree;

pub use io::{TREE_FORMAT_VERSION, TREE_MAGIC};
pub use kmeans::{kmeans, KMeans, MAX_ITERATIONS};
pub use tree::{PartitionTree, RegionLabel, TreeNode};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported tree format version {0}")]
    UnsupportedVersion(u32),
    #[error("bad tree file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PartitionError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
