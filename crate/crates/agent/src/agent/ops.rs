//! Operations, postconditions and operation sequences.

use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::Pose7;
use unimanip_core::primitives::{GripperAction, MoveToRequest, NavigateRequest, OperateRequest};
use unimanip_core::scene_graph::{NodeId, PartState};

use crate::sim::OpTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    MoveTo,
    Operate,
    Navigate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpPayload {
    MoveTo(MoveToRequest),
    Operate(OperateRequest),
    Navigate(NavigateRequest),
}

/// Expected state after an operation. Poses are world-frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    Holding {
        node: NodeId,
        class: String,
    },
    NotHolding,
    EefAt {
        pose: Pose7,
        pos_tol: f64,
        rot_tol: f64,
    },
    ObjectAt {
        node: NodeId,
        pose: Pose7,
        tol: f64,
    },
    PlacedOn {
        node: NodeId,
        support: NodeId,
        support_class: String,
    },
    PartState {
        node: NodeId,
        part: String,
        state: PartState,
    },
    Docked {
        node: NodeId,
        d_goal: f64,
        tol: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operation {
    /// Short human-readable description, e.g. `grasp apple`.
    pub label: String,
    pub payload: OpPayload,
    /// Node the operation acts on; its body is exempt from contact checks.
    pub target: NodeId,
    /// Gripper action once the motion ends.
    #[serde(default)]
    pub gripper: GripperAction,
    /// Commanded gripper opening for grasps (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture: Option<f64>,
    /// Target node pose the operation was grounded on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Pose7>,
    pub expected_post: Vec<Condition>,
}

impl Operation {
    pub fn kind(&self) -> OpKind {
        match self.payload {
            OpPayload::MoveTo(_) => OpKind::MoveTo,
            OpPayload::Operate(_) => OpKind::Operate,
            OpPayload::Navigate(_) => OpKind::Navigate,
        }
    }

    /// Trigger tags matched by failure injection.
    pub fn tags(&self) -> Vec<OpTag> {
        let mut tags = vec![match self.kind() {
            OpKind::MoveTo => OpTag::MoveTo,
            OpKind::Operate => OpTag::Operate,
            OpKind::Navigate => OpTag::Navigate,
        }];
        match self.gripper {
            GripperAction::Grasp => tags.push(OpTag::Grasp),
            GripperAction::Release => tags.push(OpTag::Release),
            GripperAction::None => {}
        }
        tags
    }

    pub fn validate(&self) -> Result<(), String> {
        match &self.payload {
            OpPayload::MoveTo(req) => {
                req.validate().map_err(|e| e.to_string())?;
                if req.gripper_action() != self.gripper {
                    return Err(format!("{}: gripper action disagrees with request", self.label));
                }
                if req.target != self.target {
                    return Err(format!("{}: request target differs from op target", self.label));
                }
            }
            OpPayload::Navigate(req) => {
                req.validate().map_err(|e| e.to_string())?;
                if self.gripper != GripperAction::None {
                    return Err(format!("{}: navigate cannot actuate the gripper", self.label));
                }
            }
            OpPayload::Operate(req) => {
                if !(req.t.iter().chain(req.r.iter()).all(|v| v.is_finite())) {
                    return Err(format!("{}: non-finite increment", self.label));
                }
                if self.gripper == GripperAction::Grasp {
                    return Err(format!("{}: operate cannot grasp", self.label));
                }
            }
        }
        if let Some(a) = self.aperture {
            if !(a > 0.0 && a.is_finite()) {
                return Err(format!("{}: aperture {a}", self.label));
            }
        }
        for c in &self.expected_post {
            let ok = match c {
                Condition::EefAt { pose, pos_tol, rot_tol } => pose.is_finite() && *pos_tol >= 0.0 && *rot_tol >= 0.0,
                Condition::ObjectAt { pose, tol, .. } => pose.is_finite() && *tol >= 0.0,
                Condition::Docked { d_goal, tol, .. } => *d_goal > 0.0 && *tol >= 0.0,
                _ => true,
            };
            if !ok {
                return Err(format!("{}: malformed postcondition {c:?}", self.label));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationSequence {
    pub ops: Vec<Operation>,
    pub source_command: String,
}
