use nalgebra::Vector3;
use rand::Rng as _;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use super::scene::SyntheticScene;
use super::SynthError;
use crate::geometry::{project_with, PinholeCamera, Se3Pose};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Train,
    Query,
}

impl ViewRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewRole::Train => "train",
            ViewRole::Query => "query",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    pub role: ViewRole,
    pub camera: PinholeCamera,
    pub poses: Vec<Se3Pose>,
}

impl ViewSet {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Shell and jitter parameters, as multiples of the scene diameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSampling {
    pub min_radius: f64,
    pub max_radius: f64,
    /// Look-at target offset from the centroid.
    pub target_jitter: f64,
    /// Fraction of scene points that must project into the image.
    pub min_visible: f64,
}

impl Default for ViewSampling {
    fn default() -> Self {
        Self {
            min_radius: 0.6,
            max_radius: 0.8,
            target_jitter: 0.05,
            min_visible: 0.1,
        }
    }
}

fn visible_fraction(scene: &SyntheticScene, pose: &Se3Pose, camera: &PinholeCamera) -> f64 {
    let w2c = pose.world_to_camera();
    let seen = scene
        .points()
        .iter()
        .filter(|p| project_with(&w2c, camera, p).is_some_and(|px| camera.contains(&px)))
        .count();
    seen as f64 / scene.points().len().max(1) as f64
}

pub fn sample_views(
    scene: &SyntheticScene,
    count: usize,
    seed: u64,
    camera: &PinholeCamera,
    role: ViewRole,
) -> Result<ViewSet, SynthError> {
    sample_views_with(scene, count, seed, camera, role, &ViewSampling::default())
}

/// Look-at poses from random directions on a shell around the centroid. Each
/// attempt is checked for visibility; rejected attempts are redrawn up to
/// `100 * count` times in total.
pub fn sample_views_with(
    scene: &SyntheticScene,
    count: usize,
    seed: u64,
    camera: &PinholeCamera,
    role: ViewRole,
    sampling: &ViewSampling,
) -> Result<ViewSet, SynthError> {
    if count == 0 {
        return Err(SynthError::InvalidParameter("view count must be at least 1".into()));
    }
    if !(sampling.min_radius > 0.0 && sampling.max_radius >= sampling.min_radius) {
        return Err(SynthError::InvalidParameter("invalid shell radii".into()));
    }
    let mut r = rng::stream(seed, 0x71E5);
    let d = scene.diameter;
    let max_attempts = 100 * count;
    let mut poses = Vec::with_capacity(count);
    let mut attempts = 0;
    while poses.len() < count && attempts < max_attempts {
        attempts += 1;
        let dir: [f64; 3] = UnitSphere.sample(&mut r);
        let dir = Vector3::from(dir);
        // keep away from the poles so the up vector stays usable
        if dir.y.abs() > 0.9 {
            continue;
        }
        let radius = d * r.random_range(sampling.min_radius..=sampling.max_radius);
        let jitter: [f64; 3] = UnitSphere.sample(&mut r);
        let jitter = Vector3::from(jitter) * (d * sampling.target_jitter * r.random::<f64>());
        let eye = scene.centroid + dir * radius;
        let target = scene.centroid + jitter;
        let roll = r.random_range(-0.1..0.1);
        let up = Vector3::new(roll, -1.0, 0.0);
        let Some(pose) = Se3Pose::look_at(eye, target, up) else {
            continue;
        };
        if visible_fraction(scene, &pose, camera) >= sampling.min_visible {
            poses.push(pose);
        }
    }
    if poses.len() < count {
        return Err(SynthError::Visibility {
            wanted: count,
            found: poses.len(),
            attempts,
        });
    }
    Ok(ViewSet {
        role,
        camera: *camera,
        poses,
    })
}
