//! Perception oracle: detections and refined observations from ground truth.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::Pose7;
use unimanip_core::primitives::PlanarPose;
use unimanip_core::scene_graph::{Detection, PartDetection, PartState, GRIPPER_MAX_OPENING};

use super::scene::SimScene;
use super::world::{Held, SimWorld};

/// A resting body counts as supported within this gap (m).
pub const SUPPORT_TOLERANCE: f64 = 0.005;

/// Pending corruption for the next coarse perception.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoarseCorruption {
    pub offsets: Vec<(String, Vector3<f64>)>,
    /// Pairs of bodies whose identities are exchanged.
    pub swaps: Vec<(String, String)>,
}

/// Detections of every perceived body. Poses are world-frame; `source`
/// carries the body id.
pub fn perceive(scene: &SimScene, corruption: &CoarseCorruption) -> Vec<Detection> {
    let mut out: Vec<Detection> = Vec::new();
    for b in scene.bodies.iter().filter(|b| b.perceived) {
        let shift: Vector3<f64> = corruption
            .offsets
            .iter()
            .filter(|(id, _)| *id == b.id)
            .map(|(_, o)| *o)
            .sum();
        let mut pose = b.pose;
        pose.position += shift;
        let mut d = Detection::new(&b.label, pose, b.shape.clone(), b.aperture.min(GRIPPER_MAX_OPENING));
        d.color.clone_from(&b.color);
        d.material.clone_from(&b.material);
        d.context.clone_from(&b.context);
        d.source = Some(b.id.clone());
        d.parts = b
            .parts
            .iter()
            .map(|p| PartDetection {
                name: p.name.clone(),
                function: p.function.clone(),
                axis: b.part_axis_world(p),
                travel: p.travel,
                handle: Some(b.handle_world(p) + shift),
                state: Some(p.state()),
            })
            .collect();
        out.push(d);
    }
    for (a, b) in &corruption.swaps {
        let ia = out.iter().position(|d| d.source.as_deref() == Some(a));
        let ib = out.iter().position(|d| d.source.as_deref() == Some(b));
        if let (Some(ia), Some(ib)) = (ia, ib) {
            let (la, ca, xa) = (out[ia].label.clone(), out[ia].color.clone(), out[ia].context.clone());
            let (lb, cb, xb) = (out[ib].label.clone(), out[ib].color.clone(), out[ib].context.clone());
            (out[ia].label, out[ia].color, out[ia].context) = (lb, cb, xb);
            (out[ib].label, out[ib].color, out[ib].context) = (la, ca, xa);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartObservation {
    pub state: PartState,
    pub handle: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyObservation {
    pub label: String,
    pub pose: Pose7,
    pub parts: BTreeMap<String, PartObservation>,
    /// Body this one rests on, if any (the table is `None`).
    pub resting_on: Option<String>,
}

/// Refined ground-truth observation used for verification and reflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Tool pose, world frame.
    pub eef: Pose7,
    pub base: PlanarPose,
    pub held: Option<String>,
    pub held_part: Option<String>,
    pub bodies: BTreeMap<String, BodyObservation>,
}

pub fn observe(world: &SimWorld) -> Observation {
    let scene = &world.scene;
    let held = world.robot.held_id().map(str::to_string);
    let held_part = match &world.robot.gripper.held {
        Some(Held::Part { part, .. }) => Some(part.clone()),
        _ => None,
    };
    let held_body = match &world.robot.gripper.held {
        Some(Held::Body { id, .. }) => Some(id.clone()),
        _ => None,
    };
    let bodies = scene
        .bodies
        .iter()
        .map(|b| {
            let resting_on = if held_body.as_deref() == Some(b.id.as_str()) {
                None
            } else {
                let group = scene.group_of(&b.id);
                let p = b.pose.position;
                let (top, support) = scene.support_height(p.x, p.y, b.bottom_z() + SUPPORT_TOLERANCE, &group);
                support.filter(|_| (b.bottom_z() - top).abs() <= SUPPORT_TOLERANCE)
            };
            let parts = b
                .parts
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        PartObservation {
                            state: p.state(),
                            handle: b.handle_world(p),
                        },
                    )
                })
                .collect();
            (
                b.id.clone(),
                BodyObservation {
                    label: b.label.clone(),
                    pose: b.pose,
                    parts,
                    resting_on,
                },
            )
        })
        .collect();
    Observation {
        eef: world.robot.eef_world(),
        base: world.robot.base,
        held,
        held_part,
        bodies,
    }
}
