//! Postcondition checks and observation-grounded graph revision.

use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::Pose7;
use unimanip_core::primitives::PlanarPose;
use unimanip_core::scene_graph::SceneGraph;

use crate::sim::Observation;

use super::ops::{Condition, Operation};

/// Edge label for "rests on".
pub const ON_LABEL: &str = "on";

/// The graph revised to what was observed: poses, part states, classes,
/// the held mark and support edges of every tracked node.
pub fn sync_graph(graph: &SceneGraph, obs: &Observation) -> SceneGraph {
    let mut g = graph.clone();
    let ids: Vec<String> = g.nodes.keys().cloned().collect();
    for id in &ids {
        let Some(src) = g.nodes[id].source.clone() else {
            continue;
        };
        let Some(b) = obs.bodies.get(&src) else { continue };
        if g.nodes[id].kinematic.pose != b.pose {
            g.update_pose(id, b.pose).expect("node exists");
        }
        let node = g.nodes.get_mut(id).expect("node exists");
        if node.semantic.class != b.label {
            node.semantic.class.clone_from(&b.label);
        }
        let mut changed = Vec::new();
        for p in node.parts.iter_mut() {
            if let Some(o) = b.parts.get(&p.name) {
                p.handle = Some(o.handle);
                if p.state != o.state {
                    changed.push((p.name.clone(), o.state));
                }
            }
        }
        for (part, state) in changed {
            g.update_part_state(id, &part, state).expect("part exists");
        }
    }
    let held = obs
        .held
        .as_deref()
        .and_then(|s| g.node_by_source(s))
        .map(|n| n.id.clone());
    g.set_held(held.as_deref()).expect("held node exists");

    let mut support = Vec::new();
    for node in g.nodes.values() {
        let Some(b) = node.source.as_deref().and_then(|s| obs.bodies.get(s)) else {
            continue;
        };
        if let Some(dst) = b.resting_on.as_deref().and_then(|s| g.node_by_source(s)) {
            support.push((node.id.clone(), dst.id.clone()));
        }
    }
    let current: Vec<(String, String)> = g
        .edges
        .iter()
        .filter(|e| e.label == ON_LABEL)
        .map(|e| (e.src.clone(), e.dst.clone()))
        .collect();
    if current != support {
        g.remove_edges(|e| e.label == ON_LABEL);
        for (a, b) in support {
            g.add_edge(&a, &b, ON_LABEL).expect("nodes exist");
        }
    }
    g
}

/// Robot state measured directly (not part of the scene graph).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proprioception {
    pub eef: Pose7,
    pub base: PlanarPose,
}

impl From<&Observation> for Proprioception {
    fn from(o: &Observation) -> Self {
        Self {
            eef: o.eef,
            base: o.base,
        }
    }
}

/// Geometric consistency of one condition against a (reflected) graph.
pub fn geometric_check(graph: &SceneGraph, robot: &Proprioception, cond: &Condition) -> (bool, String) {
    match cond {
        Condition::Holding { node, .. } => {
            let held = graph.held();
            (held == Some(node), format!("held {held:?}"))
        }
        Condition::NotHolding => {
            let held = graph.held();
            (held.is_none(), format!("held {held:?}"))
        }
        Condition::EefAt { pose, pos_tol, rot_tol } => {
            let dp = (robot.eef.position - pose.position).norm();
            let dr = robot.eef.angle_to(pose);
            (
                dp <= *pos_tol && dr <= *rot_tol,
                format!("eef error {dp:.4} m, {dr:.4} rad"),
            )
        }
        Condition::ObjectAt { node, pose, tol } => match graph.nodes.get(node) {
            Some(n) => {
                let d = (n.pose().position - pose.position).norm();
                (d <= *tol, format!("{node} off by {d:.4} m"))
            }
            None => (false, format!("{node} missing")),
        },
        Condition::PlacedOn { node, support, .. } => {
            let on = graph
                .edges
                .iter()
                .any(|e| e.label == ON_LABEL && &e.src == node && &e.dst == support);
            (on, format!("{node} on {support}: {on}"))
        }
        Condition::PartState { node, part, .. } => {
            let found = graph.nodes.get(node).and_then(|n| n.part(part)).is_some();
            (found, format!("{node}/{part} tracked: {found}"))
        }
        Condition::Docked { node, d_goal, tol } => match graph.nodes.get(node) {
            Some(n) => {
                let t = n.pose().position;
                let obs = robot.base.observe(&nalgebra::Vector2::new(t.x, t.y));
                let bearing = obs.x.atan2(obs.z);
                let dist = (obs.z - d_goal).abs();
                (
                    dist <= *tol && bearing.abs() <= *tol,
                    format!("docking error {dist:.4} m, {bearing:.4} rad"),
                )
            }
            None => (false, format!("{node} missing")),
        },
    }
}

/// Semantic consistency: does the outcome mean what was intended?
pub trait SemanticVerifier {
    fn check(&self, graph: &SceneGraph, obs: &Observation, cond: &Condition) -> bool;
}

/// Answers from simulator ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleVerifier;

impl SemanticVerifier for OracleVerifier {
    fn check(&self, graph: &SceneGraph, obs: &Observation, cond: &Condition) -> bool {
        let true_label = |node: &str| {
            graph
                .nodes
                .get(node)
                .and_then(|n| n.source.as_deref())
                .and_then(|s| obs.bodies.get(s))
                .map(|b| b.label.as_str())
        };
        match cond {
            Condition::Holding { class, .. } => {
                obs.held.as_deref().and_then(|h| obs.bodies.get(h)).map(|b| &b.label) == Some(class)
            }
            Condition::PlacedOn {
                support, support_class, ..
            } => true_label(support) == Some(support_class),
            Condition::PartState { node, part, state } => graph
                .nodes
                .get(node)
                .and_then(|n| n.source.as_deref())
                .and_then(|s| obs.bodies.get(s))
                .and_then(|b| b.parts.get(part))
                .is_some_and(|p| p.state == *state),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub condition: Condition,
    pub geometric: bool,
    pub semantic: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tool_ok: bool,
    pub geometric: bool,
    pub semantic: bool,
    pub checks: Vec<Check>,
    /// Binary outcome: 1 iff the tool ran and both consistency checks pass.
    pub e: u8,
}

/// Checks `op`'s postconditions against the reflected graph (geometric) and
/// the semantic verifier.
pub fn verify(
    reflected: &SceneGraph,
    obs: &Observation,
    op: &Operation,
    tool_ok: bool,
    semantic: &dyn SemanticVerifier,
) -> VerificationReport {
    let robot = Proprioception::from(obs);
    let checks: Vec<Check> = op
        .expected_post
        .iter()
        .map(|c| {
            let (geometric, detail) = geometric_check(reflected, &robot, c);
            Check {
                condition: c.clone(),
                geometric,
                semantic: semantic.check(reflected, obs, c),
                detail,
            }
        })
        .collect();
    let geometric = checks.iter().all(|c| c.geometric);
    let sem = checks.iter().all(|c| c.semantic);
    VerificationReport {
        tool_ok,
        geometric,
        semantic: sem,
        e: u8::from(tool_ok && geometric && sem),
        checks,
    }
}
