use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};

/// Rigid camera-to-world transform.
///
/// The rotation is kept as a unit quaternion and renormalized on every
/// construction and composition.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Se3Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a pose from raw quaternion components `(x, y, z, w)`.
    ///
    /// Returns `None` if the quaternion has (near) zero norm or non-finite entries.
    pub fn from_components(translation: Vector3<f64>, q: [f64; 4]) -> Option<Self> {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 || !translation.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Self::new(UnitQuaternion::new_unchecked(quat / norm), translation))
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(axis_angle), translation)
    }

    pub fn from_rotation_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix(rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Camera-to-world pose of a camera at `eye` whose optical axis (+z) points
    /// at `target`, with image-down (+y) roughly opposite to `up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Option<Self> {
        let z = target - eye;
        let zn = z.norm();
        if zn < 1e-12 {
            return None;
        }
        let z = z / zn;
        let x = z.cross(&(-up));
        let xn = x.norm();
        if xn < 1e-9 {
            return None;
        }
        let x = x / xn;
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        Some(Self::from_rotation_matrix(&r, eye))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Se3Pose) -> Se3Pose {
        Se3Pose {
            rotation: renormalize((self.rotation * other.rotation).into_inner()),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Se3Pose {
        let inv = self.rotation.inverse();
        Se3Pose {
            rotation: renormalize(inv.into_inner()),
            translation: -(inv * self.translation),
        }
    }

    /// Maps a point from the local (camera) frame into the world frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a world point into the local (camera) frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    /// Rotation and translation of the world-to-camera map as plain matrices,
    /// for hot loops that project many points under one pose.
    pub fn world_to_camera(&self) -> WorldToCamera {
        let r = self.rotation_matrix().transpose();
        WorldToCamera {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        quaternion_angle(&self.rotation)
    }

    /// Left perturbation of the world-to-camera transform by the tangent
    /// vector `(omega, v)`: `T_cw <- (Exp(omega), v) * T_cw`.
    pub fn retract_world_to_camera(&self, omega: &Vector3<f64>, v: &Vector3<f64>) -> Se3Pose {
        let inv = self.inverse();
        let delta = Se3Pose::new(UnitQuaternion::from_scaled_axis(*omega), *v);
        delta.compose(&inv).inverse()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WorldToCamera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl WorldToCamera {
    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

fn renormalize(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    // canonical hemisphere keeps serialized poses stable
    let q = if q.w < 0.0 { -q } else { q };
    Unit::new_normalize(q)
}

pub(crate) fn quaternion_angle(q: &UnitQuaternion<f64>) -> f64 {
    let v = q.imag().norm();
    2.0 * v.atan2(q.w.abs())
}

/// Translation error (scene units) and rotation error (degrees) between an
/// estimated and a reference pose.
pub fn pose_error(estimate: &Se3Pose, truth: &Se3Pose) -> (f64, f64) {
    let dt = (estimate.translation - truth.translation).norm();
    let rel = truth.rotation.inverse() * estimate.rotation;
    let angle = quaternion_angle(&rel).to_degrees();
    (dt, angle.clamp(0.0, 180.0))
}
