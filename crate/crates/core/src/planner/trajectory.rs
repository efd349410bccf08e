//! Grid paths to metric waypoints with interpolated orientation.

use std::io::{BufRead, Write};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{slerp, Pose7};

use super::PlanError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Waypoints {
    pub poses: Vec<Pose7>,
}

impl Waypoints {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// One `[x,y,z,qw,qx,qy,qz]` array per line.
    pub fn write_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        for p in &self.poses {
            serde_json::to_writer(&mut *out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, PlanError> {
        let mut poses = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| PlanError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let pose: Pose7 = serde_json::from_str(&line).map_err(|e| PlanError::Io(format!("line {}: {e}", n + 1)))?;
            poses.push(pose);
        }
        Ok(Self { poses })
    }
}

/// `p_i = r·u_i + origin` for every index.
pub fn path_to_metric(indices: &[[usize; 3]], r: f64, origin: &Vector3<f64>) -> Vec<Vector3<f64>> {
    indices
        .iter()
        .map(|u| Vector3::new(u[0] as f64, u[1] as f64, u[2] as f64) * r + origin)
        .collect()
}

/// Attaches `slerp(xi_s, xi_g, i/L)` to the `i`-th of `L+1` positions.
pub fn synthesize_trajectory(
    positions: &[Vector3<f64>],
    xi_s: &UnitQuaternion<f64>,
    xi_g: &UnitQuaternion<f64>,
) -> Result<Waypoints, PlanError> {
    if positions.is_empty() {
        return Err(PlanError::InvalidParams("no positions to interpolate".into()));
    }
    let l = positions.len() - 1;
    let mut poses = Vec::with_capacity(positions.len());
    for (i, p) in positions.iter().enumerate() {
        let q = if i == 0 {
            *xi_s
        } else if i == l {
            *xi_g
        } else {
            slerp(xi_s, xi_g, i as f64 / l as f64).map_err(|e| PlanError::InvalidParams(e.to_string()))?
        };
        poses.push(Pose7::new(*p, q));
    }
    Ok(Waypoints { poses })
}
