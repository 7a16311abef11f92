use nalgebra::Vector3;
use rayon::prelude::*;

use super::scene::{Primitive, SyntheticScene};
use super::views::ViewSet;
use crate::geometry::{project_with, DepthImage, PinholeCamera, Se3Pose, CHEIRALITY_EPS};

/// Splats every point to its nearest pixel, keeping the smallest depth.
pub fn render_depth(points: &[Vector3<f64>], pose: &Se3Pose, camera: &PinholeCamera) -> DepthImage {
    let mut depth = DepthImage::empty(camera.width, camera.height);
    let w2c = pose.world_to_camera();
    for p in points {
        let pc = w2c.apply(p);
        let Some(px) = camera.project_camera_point(&pc) else {
            continue;
        };
        let (u, v) = (px.x.round(), px.y.round());
        if u < 0.0 || v < 0.0 || u >= camera.width as f64 || v >= camera.height as f64 {
            continue;
        }
        let (u, v) = (u as u32, v as u32);
        if depth.valid(u, v).is_none_or(|d| pc.z < d) {
            depth.set(u, v, pc.z);
        }
    }
    depth
}

pub fn render_views(scene: &SyntheticScene, views: &ViewSet) -> Vec<DepthImage> {
    views
        .poses
        .par_iter()
        .map(|pose| render_depth(scene.points(), pose, &views.camera))
        .collect()
}

/// Distance along a ray `origin + t dir` to the primitive surface.
fn intersect(prim: &Primitive, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    match prim {
        Primitive::Sphere { center, radius } => {
            let oc = origin - center;
            let b = oc.dot(dir);
            let c = oc.norm_squared() - radius * radius;
            let a = dir.norm_squared();
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            [(-b - sq) / a, (-b + sq) / a].into_iter().find(|t| *t > 0.0)
        }
        Primitive::Rect { center, half_u, half_v } => {
            let n = half_u.cross(half_v);
            let denom = n.dot(dir);
            if denom.abs() < 1e-15 {
                return None;
            }
            let t = n.dot(&(center - origin)) / denom;
            let hit = origin + dir * t - center;
            let inside = hit.dot(half_u).abs() <= half_u.norm_squared() && hit.dot(half_v).abs() <= half_v.norm_squared();
            (t > 0.0 && inside).then_some(t)
        }
        Primitive::Box { center, axes, half_extents } => {
            let o = axes.transpose() * (origin - center);
            let d = axes.transpose() * dir;
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..3 {
                if d[i].abs() < 1e-15 {
                    if o[i].abs() > half_extents[i] {
                        return None;
                    }
                    continue;
                }
                let a = (-half_extents[i] - o[i]) / d[i];
                let b = (half_extents[i] - o[i]) / d[i];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
            if t0 > t1 {
                return None;
            }
            [t0, t1].into_iter().find(|t| *t > 0.0)
        }
    }
}

/// Exact z-depth of the first surface hit through every pixel centre.
pub fn raycast_depth(primitives: &[Primitive], pose: &Se3Pose, camera: &PinholeCamera) -> DepthImage {
    let mut depth = DepthImage::empty(camera.width, camera.height);
    let rot = pose.rotation_matrix();
    let origin = *pose.translation();
    for v in 0..camera.height {
        for u in 0..camera.width {
            // camera ray with unit z, so ray distance equals z-depth
            let ray = camera.unproject_ray(&nalgebra::Vector2::new(u as f64, v as f64));
            let dir = rot * ray;
            let best = primitives
                .iter()
                .filter_map(|p| intersect(p, &origin, &dir))
                .filter(|t| *t > CHEIRALITY_EPS)
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                depth.set(u, v, best);
            }
        }
    }
    depth
}

/// Fraction of scene points seen by at least one view. A point counts as
/// seen when it projects into the image and its depth is within `tolerance`
/// of the rendered depth at that pixel.
pub fn coverage(scene: &SyntheticScene, views: &ViewSet, depths: &[DepthImage], tolerance: f64) -> f64 {
    let cam = &views.camera;
    let transforms: Vec<_> = views.poses.iter().map(Se3Pose::world_to_camera).collect();
    let seen = scene
        .points()
        .par_iter()
        .filter(|p| {
            transforms.iter().zip(depths).any(|(w2c, depth)| {
                let Some(px) = project_with(w2c, cam, p) else {
                    return false;
                };
                let (u, v) = (px.x.round(), px.y.round());
                if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
                    return false;
                }
                let z = w2c.apply(p).z;
                depth.valid(u as u32, v as u32).is_some_and(|d| (d - z).abs() <= tolerance)
            })
        })
        .count();
    seen as f64 / scene.points().len().max(1) as f64
}
