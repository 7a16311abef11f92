use nalgebra::Vector3;
use rayon::prelude::*;

use super::{backproject, DepthImage, GeometryError, PinholeCamera, Se3Pose};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Index of the view each point was lifted from, when known.
    pub source_view: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self { points, source_view: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }

    /// Largest distance between the centroid and any point, times two.
    pub fn diameter(&self) -> f64 {
        match self.centroid() {
            Some(c) => 2.0 * self.points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max),
            None => 0.0,
        }
    }
}

/// Back-projects every `stride`-th valid pixel of every view and concatenates
/// the results in view order, then row-major pixel order.
pub fn fuse_point_cloud(
    views: &[(DepthImage, Se3Pose)],
    camera: &PinholeCamera,
    stride: u32,
) -> Result<PointCloud, GeometryError> {
    if views.is_empty() {
        return Err(GeometryError::NoViews);
    }
    if stride == 0 {
        return Err(GeometryError::InvalidStride);
    }
    for (depth, _) in views {
        if depth.width() != camera.width || depth.height() != camera.height {
            return Err(GeometryError::DimensionMismatch {
                expected: camera.width as usize * camera.height as usize,
                actual: depth.width() as usize * depth.height() as usize,
            });
        }
    }
    let per_view: Vec<Vec<Vector3<f64>>> = views
        .par_iter()
        .map(|(depth, pose)| {
            depth
                .sample_grid(stride)
                .filter_map(|(px, d)| backproject(pose, camera, &px, d).ok())
                .collect()
        })
        .collect();

    let total: usize = per_view.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(GeometryError::EmptyCloud);
    }
    let mut points = Vec::with_capacity(total);
    let mut source = Vec::with_capacity(total);
    for (i, pts) in per_view.into_iter().enumerate() {
        source.extend(std::iter::repeat_n(i as u32, pts.len()));
        points.extend(pts);
    }
    Ok(PointCloud {
        points,
        source_view: Some(source),
    })
}
