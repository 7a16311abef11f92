//! Procedural scenes and posed depth views for desk-scale experiments.
//!
//! A scene is a handful of surface primitives (rectangles, spheres, boxes)
//! with points sampled on them, recentred on the point centroid and scaled to
//! a requested diameter. Views look at the scene from a spherical shell.

mod render;
mod scene;
mod views;

pub use render::{coverage, raycast_depth, render_depth, render_views};
pub use scene::{generate_scene, Primitive, SceneManifest, SyntheticScene};
pub use views::{sample_views, sample_views_with, ViewRole, ViewSet, ViewSampling};

use thiserror::Error;

use crate::geometry::PinholeCamera;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("found only {found} of {wanted} views seeing enough of the scene after {attempts} attempts")]
    Visibility { wanted: usize, found: usize, attempts: usize },
}

/// 160 x 120 pixels, focal length 120 px, principal point at the image centre.
pub fn default_camera() -> PinholeCamera {
    PinholeCamera::centered(120.0, 160, 120).expect("valid default camera")
}
