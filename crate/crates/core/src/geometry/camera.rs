use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Se3Pose, WorldToCamera};

/// Points closer than this to the image plane (camera-frame z) are treated as
/// behind the camera.
pub const CHEIRALITY_EPS: f64 = 1e-6;

/// Ideal pinhole intrinsics. No distortion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with the principal point at the image center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidCamera(format!("{self:?}")))
        }
    }

    /// Projects a camera-frame point. `None` when behind the cheirality plane.
    #[inline]
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if pc.z <= CHEIRALITY_EPS || !pc.z.is_finite() {
            return None;
        }
        Some(Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// Normalized image-plane ray `(x, y, 1)` through a pixel.
    #[inline]
    pub fn unproject_ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

/// Projects a world point through a camera-to-world pose.
pub fn project(pose: &Se3Pose, camera: &PinholeCamera, point: &Vector3<f64>) -> Option<Vector2<f64>> {
    camera.project_camera_point(&pose.inverse_transform_point(point))
}

#[inline]
pub fn project_with(w2c: &WorldToCamera, camera: &PinholeCamera, point: &Vector3<f64>) -> Option<Vector2<f64>> {
    camera.project_camera_point(&w2c.apply(point))
}

/// Lifts a pixel with z-depth into the world frame.
pub fn backproject(
    pose: &Se3Pose,
    camera: &PinholeCamera,
    pixel: &Vector2<f64>,
    depth: f64,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::InvalidDepth(depth));
    }
    Ok(pose.transform_point(&(camera.unproject_ray(pixel) * depth)))
}
