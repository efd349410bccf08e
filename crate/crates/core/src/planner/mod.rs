//! Collision-free waypoint generation: distance field, clearance-constrained
//! search and metric trajectory synthesis.

mod astar;
mod esdf;
mod trajectory;

use nalgebra::Vector3;

use crate::kinematics::Pose7;
use crate::occupancy::VoxelGrid;

pub use astar::{astar, astar_free, astar_masked, Connectivity, GridPath, PlannerParams, StepCounts, DEFAULT_R_SAFE};
pub use esdf::{compute_esdf, read_esdf, write_esdf, Esdf, EsdfHeader, ESDF_DUMP_FORMAT, ESDF_DUMP_VERSION};
pub use trajectory::{path_to_metric, synthesize_trajectory, Waypoints};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("{0} violates the clearance constraint")]
    InfeasibleEndpoint(String),
    #[error("no path between start and goal")]
    NoPath,
    #[error("{0} lies outside the grid")]
    OutOfBounds(String),
    #[error("invalid planner input: {0}")]
    InvalidParams(String),
    #[error("waypoint io: {0}")]
    Io(String),
}

/// Everything produced while planning one segment.
#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub waypoints: Waypoints,
    pub path: GridPath,
}

/// Plans from `p_s` to `p_t` over the conservative grid.
pub fn plan(p_s: &Pose7, p_t: &Pose7, m_occ: &VoxelGrid, params: &PlannerParams) -> Result<Waypoints, PlanError> {
    let phi = compute_esdf(m_occ);
    plan_with_esdf(p_s, p_t, &phi, params).map(|o| o.waypoints)
}

/// As [`plan`], reusing a precomputed distance field.
pub fn plan_with_esdf(p_s: &Pose7, p_t: &Pose7, phi: &Esdf, params: &PlannerParams) -> Result<PlanOutput, PlanError> {
    params.validate()?;
    let spec = phi.spec;
    let u_s = spec
        .nearest(&p_s.position)
        .ok_or_else(|| PlanError::OutOfBounds("start".into()))?;
    let u_t = spec
        .nearest(&p_t.position)
        .ok_or_else(|| PlanError::OutOfBounds("goal".into()))?;
    let path = astar(phi, u_s, u_t, params)?;
    let mut positions: Vec<Vector3<f64>> = path_to_metric(&path.indices, spec.resolution, &spec.origin);
    if positions.len() == 1 && p_s.position != p_t.position {
        positions.push(p_t.position);
    }
    let last = positions.len() - 1;
    positions[0] = p_s.position;
    positions[last] = p_t.position;
    let waypoints = synthesize_trajectory(&positions, &p_s.orientation, &p_t.orientation)?;
    Ok(PlanOutput { waypoints, path })
}
