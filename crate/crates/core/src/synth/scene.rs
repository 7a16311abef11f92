use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geometry::PointCloud;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Rectangle spanned by two orthogonal half-extent vectors.
    Rect { center: Vector3<f64>, half_u: Vector3<f64>, half_v: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Oriented box; `axes` columns are the box axes in world coordinates.
    Box { center: Vector3<f64>, axes: Matrix3<f64>, half_extents: Vector3<f64> },
}

impl Primitive {
    pub fn area(&self) -> f64 {
        match self {
            Primitive::Rect { half_u, half_v, .. } => 4.0 * half_u.norm() * half_v.norm(),
            Primitive::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            Primitive::Box { half_extents: h, .. } => 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z),
        }
    }

    fn sample(&self, r: &mut Rng) -> Vector3<f64> {
        let mut sym = || 2.0 * r.random::<f64>() - 1.0;
        match self {
            Primitive::Rect { center, half_u, half_v } => center + half_u * sym() + half_v * sym(),
            Primitive::Sphere { center, radius } => {
                let d: [f64; 3] = UnitSphere.sample(r);
                center + Vector3::from(d) * *radius
            }
            Primitive::Box { center, axes, half_extents: h } => {
                let faces = [h.y * h.z, h.x * h.z, h.x * h.y];
                let pick = r.random::<f64>() * (faces[0] + faces[1] + faces[2]);
                let axis = if pick < faces[0] {
                    0
                } else if pick < faces[0] + faces[1] {
                    1
                } else {
                    2
                };
                let side = if r.random::<bool>() { 1.0 } else { -1.0 };
                let mut local = Vector3::new(
                    h.x * (2.0 * r.random::<f64>() - 1.0),
                    h.y * (2.0 * r.random::<f64>() - 1.0),
                    h.z * (2.0 * r.random::<f64>() - 1.0),
                );
                local[axis] = side * h[axis];
                center + axes * local
            }
        }
    }

    /// Same primitive after `p -> (p - origin) * scale`.
    fn rescaled(&self, origin: &Vector3<f64>, scale: f64) -> Self {
        let c = |p: &Vector3<f64>| (p - origin) * scale;
        match self {
            Primitive::Rect { center, half_u, half_v } => Primitive::Rect {
                center: c(center),
                half_u: half_u * scale,
                half_v: half_v * scale,
            },
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: c(center),
                radius: radius * scale,
            },
            Primitive::Box { center, axes, half_extents } => Primitive::Box {
                center: c(center),
                axes: *axes,
                half_extents: half_extents * scale,
            },
        }
    }
}

fn random_rotation(r: &mut Rng) -> Matrix3<f64> {
    let axis = Vector3::new(
        StandardNormal.sample(r),
        StandardNormal.sample(r),
        StandardNormal.sample(r),
    );
    let angle = r.random::<f64>() * std::f64::consts::PI;
    Rotation3::new(axis.normalize() * angle).into_inner()
}

fn random_primitive(r: &mut Rng) -> Primitive {
    let center = Vector3::new(
        r.random_range(-0.6..0.6),
        r.random_range(-0.6..0.6),
        r.random_range(-0.6..0.6),
    );
    match r.random_range(0..3) {
        0 => {
            let rot = random_rotation(r);
            Primitive::Rect {
                center,
                half_u: rot.column(0) * r.random_range(0.3..0.9),
                half_v: rot.column(1) * r.random_range(0.3..0.9),
            }
        }
        1 => Primitive::Sphere {
            center,
            radius: r.random_range(0.2..0.5),
        },
        _ => Primitive::Box {
            center,
            axes: random_rotation(r),
            half_extents: Vector3::new(
                r.random_range(0.15..0.5),
                r.random_range(0.15..0.5),
                r.random_range(0.15..0.5),
            ),
        },
    }
}

/// Splits `n` over weights by largest remainder, ties to the lower index.
fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub diameter: f64,
    /// Primitives in final scene coordinates.
    pub primitives: Vec<Primitive>,
    /// Points sampled on each primitive, in order.
    pub counts: Vec<usize>,
    pub cloud: PointCloud,
    pub centroid: Vector3<f64>,
}

impl SyntheticScene {
    pub fn points(&self) -> &[Vector3<f64>] {
        &self.cloud.points
    }

    /// Axis-aligned box of half-width `diameter / 2` around the centroid.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let h = Vector3::repeat(self.diameter / 2.0);
        (self.centroid - h, self.centroid + h)
    }

    pub fn manifest(&self) -> SceneManifest {
        SceneManifest {
            format_version: 1,
            seed: self.seed,
            diameter: self.diameter,
            n_points: self.cloud.len(),
            centroid: self.centroid,
            primitives: self.primitives.clone(),
            counts: self.counts.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub format_version: u32,
    pub seed: u64,
    pub diameter: f64,
    pub n_points: usize,
    pub centroid: Vector3<f64>,
    pub primitives: Vec<Primitive>,
    pub counts: Vec<usize>,
}

/// Samples `n_points` surface points over 3 to 6 random primitives, then
/// recentres them on their centroid and scales them so the farthest point
/// sits at `diameter / 2`.
pub fn generate_scene(seed: u64, n_points: usize, diameter: f64) -> Result<SyntheticScene, SynthError> {
    if n_points == 0 {
        return Err(SynthError::InvalidParameter("n_points must be at least 1".into()));
    }
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(SynthError::InvalidParameter("diameter must be positive".into()));
    }
    let mut r = rng::stream(seed, 0x5CE4E);
    let count = r.random_range(3..=6);
    let raw: Vec<Primitive> = (0..count).map(|_| random_primitive(&mut r)).collect();
    let counts = allocate(n_points, &raw.iter().map(Primitive::area).collect::<Vec<_>>());
    let mut points = Vec::with_capacity(n_points);
    for (prim, &c) in raw.iter().zip(&counts) {
        for _ in 0..c {
            points.push(prim.sample(&mut r));
        }
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let radius = points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    let scale = if radius > 0.0 { diameter / 2.0 / radius } else { 1.0 };
    for p in points.iter_mut() {
        *p = (*p - centroid) * scale;
        // clamp the extreme point against rounding past the bound
        let n = p.norm();
        if n > diameter / 2.0 {
            *p *= diameter / 2.0 / n;
        }
    }
    let primitives = raw.iter().map(|p| p.rescaled(&centroid, scale)).collect();
    let cloud = PointCloud::from_points(points);
    let centroid = cloud.centroid().unwrap_or_else(Vector3::zeros);
    Ok(SyntheticScene {
        seed,
        diameter,
        primitives,
        counts,
        cloud,
        centroid,
    })
}
