//! Serial chains of revolute joints and their forward kinematics.

use std::path::Path;

use nalgebra::{DMatrix, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::pose::{rpy_intrinsic, Pose7, Transform};
use super::KinematicsError;

/// Chain shipped with the crate: a 6-DoF arm with a spherical wrist and
/// roughly 0.7 m reach, in the class of compact tabletop manipulators.
pub const BUILTIN_A1_CHAIN: &str = include_str!("../../assets/a1_arm.json");

/// Offset written as translation plus intrinsic roll/pitch/yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct OffsetSpec {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl OffsetSpec {
    pub fn to_transform(&self) -> Transform {
        Transform::new(
            rpy_intrinsic(self.rpy[0], self.rpy[1], self.rpy[2]),
            Vector3::from(self.xyz),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin: OffsetSpec,
    /// `[q_min, q_max]` in radians.
    pub limits: [f64; 2],
}

/// On-disk chain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub name: String,
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub end_effector: OffsetSpec,
    /// Optional nominal configuration (e.g. a ready pose above the table).
    #[serde(default)]
    pub home: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevoluteJoint {
    pub name: String,
    pub axis: Unit<Vector3<f64>>,
    /// Fixed transform from the previous joint frame to this joint's frame.
    pub origin: Transform,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub name: String,
    pub joints: Vec<RevoluteJoint>,
    pub end_effector: Transform,
    pub home: Option<Vec<f64>>,
}

impl KinematicChain {
    pub fn from_spec(spec: &ChainSpec) -> Result<Self, KinematicsError> {
        let mut joints = Vec::with_capacity(spec.joints.len());
        for j in &spec.joints {
            let axis = Vector3::from(j.axis);
            let n = axis.norm();
            if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {} axis is not unit-norm (|a| = {n})",
                    j.name
                )));
            }
            let [min, max] = j.limits;
            if !(min <= max) {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {} has q_min {min} > q_max {max}",
                    j.name
                )));
            }
            joints.push(RevoluteJoint {
                name: j.name.clone(),
                axis: Unit::new_normalize(axis),
                origin: j.origin.to_transform(),
                min,
                max,
            });
        }
        let chain = Self {
            name: spec.name.clone(),
            joints,
            end_effector: spec.end_effector.to_transform(),
            home: spec.home.clone(),
        };
        if let Some(home) = &chain.home {
            chain.check_limits(home)?;
        }
        Ok(chain)
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let spec: ChainSpec =
            serde_json::from_str(text).map_err(|e| KinematicsError::InvalidChain(format!("chain file: {e}")))?;
        Self::from_spec(&spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::InvalidChain(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The shipped 6-DoF test chain.
    pub fn builtin_a1() -> Self {
        Self::from_json(BUILTIN_A1_CHAIN).expect("builtin chain is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.min).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.max).collect()
    }

    /// Returns a copy with joint `index` restricted to `[lo, hi]` ∩ its current range.
    pub fn with_clamped_joint(&self, index: usize, lo: f64, hi: f64) -> Result<Self, KinematicsError> {
        let mut out = self.clone();
        let j = out
            .joints
            .get_mut(index)
            .ok_or_else(|| KinematicsError::InvalidArgument(format!("joint index {index} out of range")))?;
        let (min, max) = (j.min.max(lo), j.max.min(hi));
        if min > max {
            return Err(KinematicsError::InvalidArgument(format!(
                "clamp [{lo}, {hi}] does not intersect joint {index} range"
            )));
        }
        j.min = min;
        j.max = max;
        Ok(out)
    }

    pub fn check_dims(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn check_limits(&self, q: &[f64]) -> Result<(), KinematicsError> {
        self.check_dims(q)?;
        for (i, (j, &v)) in self.joints.iter().zip(q).enumerate() {
            if !v.is_finite() || v < j.min || v > j.max {
                return Err(KinematicsError::JointLimit {
                    joint: i,
                    value: v,
                    min: j.min,
                    max: j.max,
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (j, v) in self.joints.iter().zip(q.iter_mut()) {
            *v = v.clamp(j.min, j.max);
        }
    }

    /// End-effector pose for `q`; out-of-limit joints are an error, never clamped.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Pose7, KinematicsError> {
        self.check_limits(q)?;
        Ok(self.fk_transform(q).to_pose())
    }

    /// Forward kinematics without limit checks. `q.len()` must equal `dof()`.
    pub(crate) fn fk_transform(&self, q: &[f64]) -> Transform {
        let mut t = Transform::identity();
        for (j, &angle) in self.joints.iter().zip(q) {
            t = t
                .compose(&j.origin)
                .compose(&Transform::from_rotation(Rotation3::from_axis_angle(&j.axis, angle)));
        }
        t.compose(&self.end_effector)
    }

    /// End-effector transform plus the 6×n geometric Jacobian (linear rows first),
    /// both in the chain base frame.
    pub(crate) fn fk_with_jacobian(&self, q: &[f64]) -> (Transform, DMatrix<f64>) {
        let n = self.dof();
        let mut t = Transform::identity();
        let mut axes = Vec::with_capacity(n);
        for (j, &angle) in self.joints.iter().zip(q) {
            t = t.compose(&j.origin);
            axes.push((t.rotation * j.axis.into_inner(), t.translation));
            t = t.compose(&Transform::from_rotation(Rotation3::from_axis_angle(&j.axis, angle)));
        }
        let eef = t.compose(&self.end_effector);
        let mut jac = DMatrix::zeros(6, n);
        for (i, (axis, origin)) in axes.iter().enumerate() {
            let lin = axis.cross(&(eef.translation - origin));
            for r in 0..3 {
                jac[(r, i)] = lin[r];
                jac[(r + 3, i)] = axis[r];
            }
        }
        (eef, jac)
    }

    /// Upper bound on the distance from the base to the end effector.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.origin.translation.norm()).sum::<f64>() + self.end_effector.translation.norm()
    }
}
