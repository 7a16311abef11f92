//! Few-shot visual localization through hierarchical scene region
//! classification.
//!
//! A scene is memorized from a handful of posed depth views:
//!
//! 1. the views are fused into a point cloud and recursively partitioned by
//!    K-Means into an `n`-level, `m`-way [`partition::PartitionTree`];
//! 2. a hierarchical [`classifier`] learns to map per-pixel descriptors to the
//!    region labels of that tree;
//! 3. at query time every pixel is matched to the `q` representative points of
//!    its predicted leaf, and the [`pose`] solver estimates the camera with a
//!    one-to-many PnP-RANSAC followed by Levenberg-Marquardt refinement.
//!
//! [`synth`] generates procedural scenes, views and depth maps so the whole
//! chain can be checked against exact ground truth.

pub mod classifier;
pub mod descriptors;
pub mod geometry;
pub mod partition;
pub mod pose;
pub mod rng;
pub mod synth;

pub use geometry::{PinholeCamera, PointCloud, Se3Pose};
