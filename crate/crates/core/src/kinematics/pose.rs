//! Rigid-body poses, transforms and quaternion interpolation.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::KinematicsError;

/// Tolerance used when checking that a caller-supplied quaternion is unit-norm.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Below this angle (radians) slerp degenerates to a normalized lerp.
pub const SLERP_EPSILON: f64 = 1e-6;

/// Position plus unit quaternion, the 7-vector `[x, y, z, qw, qx, qy, qz]`.
///
/// Serialized as a flat array of seven numbers in that order. Deserializing
/// normalizes the quaternion and rejects zero or non-finite input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 7]", try_from = "[f64; 7]")]
pub struct Pose7 {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose7 {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// Builds a pose from raw `(w, x, y, z)` quaternion components, normalizing them.
    pub fn from_wxyz(position: Vector3<f64>, wxyz: [f64; 4]) -> Result<Self, KinematicsError> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 || !position.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::InvalidArgument(format!(
                "cannot build pose from position {:?} and quaternion {:?}",
                position.as_slice(),
                wxyz
            )));
        }
        // Already-unit input is kept bit-for-bit so serialization round-trips exactly.
        let orientation = if (norm - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Self::new(position, orientation))
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation.quaternion();
        [self.position.x, self.position.y, self.position.z, q.w, q.i, q.j, q.k]
    }

    pub fn to_transform(&self) -> Transform {
        Transform::new(self.orientation.to_rotation_matrix(), self.position)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Geodesic rotation angle between this pose's orientation and `other`'s.
    pub fn angle_to(&self, other: &Pose7) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }
}

impl From<Pose7> for [f64; 7] {
    fn from(p: Pose7) -> Self {
        p.to_array()
    }
}

impl TryFrom<[f64; 7]> for Pose7 {
    type Error = KinematicsError;

    fn try_from(a: [f64; 7]) -> Result<Self, Self::Error> {
        Pose7::from_wxyz(Vector3::new(a[0], a[1], a[2]), [a[3], a[4], a[5], a[6]])
    }
}

impl Default for Pose7 {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rigid transform stored as an orthonormal rotation matrix plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Transform {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Rotation3::identity(), translation)
    }

    pub fn from_rotation(rotation: Rotation3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// `self · other`
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Transform {
        let r_inv = self.rotation.inverse();
        Transform::new(r_inv, -(r_inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_pose(&self) -> Pose7 {
        Pose7::new(self.translation, UnitQuaternion::from_rotation_matrix(&self.rotation))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.matrix().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        self.compose(&rhs)
    }
}

/// Reference frame for a relative motion increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IncrementFrame {
    /// Robot base frame: the increment left-multiplies the current pose.
    #[serde(rename = "base", alias = "F_b")]
    Base,
    /// End-effector frame: the increment right-multiplies the current pose.
    #[serde(rename = "eef", alias = "F_e")]
    Eef,
}

/// Rotation for roll-pitch-yaw increments applied intrinsically in x, y, z order.
pub fn rpy_intrinsic(roll: f64, pitch: f64, yaw: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), roll)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), pitch)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
}

/// Applies a translation + roll/pitch/yaw increment to `current` in the chosen frame.
pub fn apply_increment(
    current: &Transform,
    translation: &Vector3<f64>,
    rpy: &[f64; 3],
    frame: IncrementFrame,
) -> Result<Transform, KinematicsError> {
    if !current.is_finite() || !translation.iter().all(|v| v.is_finite()) || !rpy.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::InvalidArgument("non-finite increment or pose".into()));
    }
    if let Some(bad) = rpy
        .iter()
        .find(|a| **a <= -std::f64::consts::PI || **a > std::f64::consts::PI)
    {
        return Err(KinematicsError::InvalidArgument(format!(
            "rotation increment {bad} outside (-pi, pi]"
        )));
    }
    let delta = Transform::new(rpy_intrinsic(rpy[0], rpy[1], rpy[2]), *translation);
    Ok(match frame {
        IncrementFrame::Base => delta.compose(current),
        IncrementFrame::Eef => current.compose(&delta),
    })
}

fn check_unit(q: &Quaternion<f64>, what: &str) -> Result<(), KinematicsError> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(KinematicsError::InvalidArgument(format!(
            "{what} quaternion is not unit-norm (|q| = {n})"
        )));
    }
    Ok(())
}

/// Spherical linear interpolation along the shortest arc.
///
/// `goal` is negated when its dot product with `start` is negative so the
/// result always follows the short way around SO(3).
pub fn slerp(
    start: &Quaternion<f64>,
    goal: &Quaternion<f64>,
    alpha: f64,
) -> Result<UnitQuaternion<f64>, KinematicsError> {
    check_unit(start, "start")?;
    check_unit(goal, "goal")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(KinematicsError::InvalidArgument(format!(
            "interpolation parameter {alpha} outside [0, 1]"
        )));
    }
    let mut dot = start.dot(goal);
    let goal = if dot < 0.0 {
        dot = -dot;
        -goal
    } else {
        *goal
    };
    let theta = dot.min(1.0).acos();
    let q = if theta < SLERP_EPSILON {
        start * (1.0 - alpha) + goal * alpha
    } else {
        let s = theta.sin();
        start * (((1.0 - alpha) * theta).sin() / s) + goal * ((alpha * theta).sin() / s)
    };
    Ok(UnitQuaternion::from_quaternion(q))
}

/// Angle-axis vector of `a⁻¹·b` (expressed in `a`'s frame), norm in `[0, π]`.
pub fn orientation_error(a: &Quaternion<f64>, b: &Quaternion<f64>) -> Result<Vector3<f64>, KinematicsError> {
    check_unit(a, "first")?;
    check_unit(b, "second")?;
    Ok(log_unit(&(a.conjugate() * b)))
}

/// Quaternion logarithm as an angle-axis vector, taking the shortest arc.
pub(crate) fn log_unit(q: &Quaternion<f64>) -> Vector3<f64> {
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let s = v.norm();
    if s < 1e-15 {
        return Vector3::zeros();
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Unit quaternion for a rotation of `angle` about `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// Rotation matrix whose columns are the given orthonormal axes.
pub fn rotation_from_axes(x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
}
