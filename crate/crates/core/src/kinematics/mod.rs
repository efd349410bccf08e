//! Poses, transforms, serial-chain forward kinematics and relaxed IK.

mod chain;
mod ik;
mod pose;

pub use chain::{ChainSpec, JointSpec, KinematicChain, OffsetSpec, RevoluteJoint, BUILTIN_A1_CHAIN};
pub use ik::{relaxed_ik, relaxed_ik_observed, IkObserver, IkParams, IkSolution, NoopObserver};
pub use pose::{
    apply_increment, axis_angle, orientation_error, rotation_from_axes, rpy_intrinsic, slerp, IncrementFrame, Pose7,
    Transform, SLERP_EPSILON, UNIT_NORM_TOLERANCE,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("joint {joint} value {value} outside [{min}, {max}]")]
    JointLimit {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error(
        "no IK solution within {rounds} relaxation rounds \
         (best position error {position_error:.4} m, orientation error {orientation_error:.4} rad)"
    )]
    IkInfeasible {
        position_error: f64,
        orientation_error: f64,
        rounds: u32,
    },
}
