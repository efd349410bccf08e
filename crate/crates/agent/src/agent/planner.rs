//! Task planner interface and the deterministic rule-based planner.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::{IncrementFrame, Pose7};
use unimanip_core::primitives::{
    GripperAction, MoveToRequest, NavigateRequest, OperateRequest, PlanarPose, ToolName, ToolSet,
};
use unimanip_core::scene_graph::{NodeId, ObjectNode, PartState, SceneGraph};

use super::memory::MemoryStore;
use super::ops::{Condition, OpPayload, Operation, OperationSequence};
use super::trace::{ExecutionTrace, ToolErrorKind};
use super::verify::ON_LABEL;
use super::AgentError;

/// Tool position tolerance for `EefAt` checks (m).
pub const POSITION_TOLERANCE: f64 = 0.02;
/// Tool orientation tolerance for `EefAt` checks (rad).
pub const ROTATION_TOLERANCE: f64 = 0.05;
/// Target motion beyond which the plan is considered stale (m).
pub const DISPLACEMENT_THRESHOLD: f64 = 0.12;
/// Target residual beyond which a missed grasp is blamed on localization (m).
pub const MISLOCALIZATION_THRESHOLD: f64 = 0.02;
/// Drop height of a released object (m). The tool ends this far above the
/// object's top, outside the planner's clearance radius.
pub const PLACE_CLEARANCE: f64 = 0.07;
pub const PRESS_STANDOFF: f64 = 0.08;
pub const RETREAT_DISTANCE: f64 = 0.10;
pub const POUR_HEIGHT: f64 = 0.15;
/// Tilt about the tool y axis while pouring (rad).
pub const POUR_TILT: f64 = 1.2;
pub const OBJECT_AT_TOLERANCE: f64 = 0.03;
/// Forward band (m) and lateral half-width (m) the arm serves from a fixed
/// base pose; targets outside it trigger a docking step.
pub const ARM_REACH_FORWARD: [f64; 2] = [0.25, 0.55];
pub const ARM_REACH_LATERAL: f64 = 0.3;
pub const DOCKING_TOLERANCE: f64 = 0.03;
pub const APERTURE_SHRINK: f64 = 0.9;
pub const APPROACH_BACKOFF: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisCategory {
    GraspSlippage,
    Collision,
    OcclusionMislocalization,
    TargetDisplaced,
    SceneTopologyChange,
    KinematicInfeasible,
    Unknown,
}

impl DiagnosisCategory {
    /// Categories repaired by adjusting the failed operation in place.
    pub fn is_local(self) -> bool {
        matches!(
            self,
            Self::GraspSlippage | Self::OcclusionMislocalization | Self::KinematicInfeasible
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub category: DiagnosisCategory,
    pub detail: String,
    /// Target pose residual (m) or solver error, depending on the category.
    pub residual: f64,
}

/// Robot-side facts the planner may condition on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanContext {
    pub tools: ToolSet,
    /// Tool pose, world frame.
    pub eef: Pose7,
    pub base: PlanarPose,
}

pub trait TaskPlanner {
    fn decompose(
        &mut self,
        command: &str,
        ctx: &PlanContext,
        graph: &SceneGraph,
    ) -> Result<OperationSequence, AgentError>;
    fn diagnose(&mut self, trace: &ExecutionTrace, graph: &SceneGraph) -> Diagnosis;
    fn replan(
        &mut self,
        graph: &SceneGraph,
        command: &str,
        memory: &MemoryStore,
        ctx: &PlanContext,
    ) -> Result<OperationSequence, AgentError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Clause {
    Put {
        object: String,
        dest: String,
    },
    Articulate {
        part: Option<String>,
        object: String,
        open: bool,
    },
    Press {
        object: String,
    },
    Pour {
        object: String,
        dest: String,
    },
}

const ARTICLES: [&str; 3] = ["the", "a", "an"];
const PLACE_PREPOSITIONS: [&str; 6] = ["in", "into", "on", "onto", "to", "inside"];

fn split_at_word<'a>(words: &'a [&'a str], set: &[&str], verb: &str) -> Result<(String, String), AgentError> {
    let i = words
        .iter()
        .position(|w| set.contains(w))
        .ok_or_else(|| AgentError::InvalidCommand(format!("\"{verb}\" needs one of {set:?}")))?;
    let (a, b) = (words[..i].join(" "), words[i + 1..].join(" "));
    if a.is_empty() || b.is_empty() {
        return Err(AgentError::InvalidCommand(format!("incomplete \"{verb}\" clause")));
    }
    Ok((a, b))
}

fn parse_command(command: &str) -> Result<Vec<Clause>, AgentError> {
    let cleaned: String = command
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '_' { c } else { ' ' })
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().filter(|w| !ARTICLES.contains(w)).collect();
    if words.is_empty() {
        return Err(AgentError::InvalidCommand("empty command".into()));
    }
    let mut clauses = Vec::new();
    for chunk in words.split(|w| *w == "then") {
        let chunk: Vec<&str> = match chunk {
            [rest @ .., "and"] => rest.to_vec(),
            c => c.to_vec(),
        };
        let Some((verb, rest)) = chunk.split_first() else {
            return Err(AgentError::InvalidCommand("empty clause".into()));
        };
        if rest.is_empty() {
            return Err(AgentError::InvalidCommand(format!("\"{verb}\" needs an object")));
        }
        let clause = match *verb {
            "put" | "place" | "move" => {
                let (object, dest) = split_at_word(rest, &PLACE_PREPOSITIONS, verb)?;
                Clause::Put { object, dest }
            }
            "open" | "close" => {
                let open = *verb == "open";
                match rest.iter().position(|w| *w == "of") {
                    Some(_) => {
                        let (part, object) = split_at_word(rest, &["of"], verb)?;
                        Clause::Articulate {
                            part: Some(part),
                            object,
                            open,
                        }
                    }
                    None => Clause::Articulate {
                        part: None,
                        object: rest.join(" "),
                        open,
                    },
                }
            }
            "press" | "push" => Clause::Press { object: rest.join(" ") },
            "pour" => {
                let (object, dest) = split_at_word(rest, &["into", "in", "onto"], verb)?;
                Clause::Pour { object, dest }
            }
            other => return Err(AgentError::InvalidCommand(format!("unsupported verb \"{other}\""))),
        };
        clauses.push(clause);
    }
    Ok(clauses)
}

fn ground<'g>(graph: &'g SceneGraph, phrase: &str) -> Result<&'g ObjectNode, AgentError> {
    graph
        .query_by_context(phrase)
        .first()
        .and_then(|id| graph.nodes.get(id))
        .ok_or_else(|| AgentError::GroundingFailure(phrase.to_string()))
}

fn part_matches(name: &str, function: &str, phrase: &str) -> bool {
    phrase
        .split_whitespace()
        .any(|w| w == name || function.split_whitespace().any(|f| f == w))
}

/// Resolves an articulated part either as `PART of OBJECT` or from a bare
/// phrase naming the part or its owner.
fn ground_part<'g>(
    graph: &'g SceneGraph,
    part: Option<&str>,
    object: &str,
) -> Result<(&'g ObjectNode, String), AgentError> {
    if let Some(part) = part {
        let node = ground(graph, object)?;
        let p = node
            .parts
            .iter()
            .find(|p| part_matches(&p.name, &p.function, part))
            .ok_or_else(|| AgentError::GroundingFailure(format!("{part} of {object}")))?;
        return Ok((node, p.name.clone()));
    }
    for node in graph.nodes.values() {
        if let Some(p) = node.parts.iter().find(|p| part_matches(&p.name, &p.function, object)) {
            return Ok((node, p.name.clone()));
        }
    }
    let node = ground(graph, object)?;
    let p = node
        .parts
        .first()
        .ok_or_else(|| AgentError::GroundingFailure(format!("part of {object}")))?;
    Ok((node, p.name.clone()))
}

fn top_of(n: &ObjectNode) -> f64 {
    n.pose().position.z + n.attributes.shape.half_height()
}

/// Tool pointing straight down, with the arm plane through `p`.
pub fn top_down(base: &PlanarPose, p: &Vector3<f64>) -> UnitQuaternion<f64> {
    let local = base.observe(&Vector2::new(p.x, p.y));
    // `observe` reports x to the left and z forward
    let yaw = base.theta + local.x.atan2(local.z);
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI)
}

/// Tool pointing horizontally along `dir`.
pub fn horizontal(dir: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), dir.y.atan2(dir.x))
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2)
}

fn eef_at(pose: Pose7) -> Condition {
    Condition::EefAt {
        pose,
        pos_tol: POSITION_TOLERANCE,
        rot_tol: ROTATION_TOLERANCE,
    }
}

struct Builder<'g> {
    graph: &'g SceneGraph,
    tools: &'g ToolSet,
    base: PlanarPose,
    /// Skip sub-goals the graph already shows as achieved.
    skip_done: bool,
    /// What the gripper holds once the ops so far have run.
    held: Option<NodeId>,
    eef: Pose7,
    ops: Vec<Operation>,
}

impl<'g> Builder<'g> {
    fn held(&self) -> Option<&NodeId> {
        self.held.as_ref()
    }

    /// Puts down whatever is held unless it is `keep`.
    fn free_gripper(&mut self, keep: &str) {
        let Some(h) = self.held.clone().filter(|h| h != keep) else {
            return;
        };
        let node = &self.graph.nodes[&h];
        let mut op = self.move_to(format!("release {h}"), node, self.eef, GripperAction::Release);
        op.expected_post = vec![Condition::NotHolding];
        self.ops.push(op);
        self.held = None;
    }

    fn move_to(&self, label: String, node: &ObjectNode, goal: Pose7, gripper: GripperAction) -> Operation {
        Operation {
            label,
            payload: OpPayload::MoveTo(MoveToRequest {
                target: node.id.clone(),
                goal,
                grasp: gripper == GripperAction::Grasp,
                release: gripper == GripperAction::Release,
            }),
            target: node.id.clone(),
            gripper,
            aperture: (gripper == GripperAction::Grasp).then_some(node.kinematic.grasp_aperture),
            reference: Some(*node.pose()),
            expected_post: vec![eef_at(goal)],
        }
    }

    fn operate(&self, label: String, node: &ObjectNode, req: OperateRequest, gripper: GripperAction) -> Operation {
        Operation {
            label,
            payload: OpPayload::Operate(req),
            target: node.id.clone(),
            gripper,
            aperture: None,
            reference: Some(*node.pose()),
            expected_post: Vec::new(),
        }
    }

    /// Docks in front of `node` first when it is out of arm's reach.
    fn reach(&mut self, node: &ObjectNode) {
        if !self.tools.contains(ToolName::Navigate) {
            return;
        }
        let p = node.pose().position;
        let target = Vector2::new(p.x, p.y);
        let obs = self.base.observe(&target);
        if (ARM_REACH_FORWARD[0]..=ARM_REACH_FORWARD[1]).contains(&obs.z) && obs.x.abs() <= ARM_REACH_LATERAL {
            return;
        }
        let req = NavigateRequest::new(&node.id);
        let from = Vector2::new(self.base.x, self.base.y);
        let u = (target - from).normalize();
        let stop = target - u * req.d_goal;
        self.base = PlanarPose {
            x: stop.x,
            y: stop.y,
            theta: u.y.atan2(u.x),
        };
        self.ops.push(Operation {
            label: format!("dock at {}", node.id),
            expected_post: vec![Condition::Docked {
                node: node.id.clone(),
                d_goal: req.d_goal,
                tol: DOCKING_TOLERANCE,
            }],
            payload: OpPayload::Navigate(req),
            target: node.id.clone(),
            gripper: GripperAction::None,
            aperture: None,
            reference: Some(*node.pose()),
        });
    }

    fn grasp(&mut self, x: &ObjectNode) {
        self.free_gripper(&x.id);
        self.reach(x);
        let p = x.pose().position;
        let goal = Pose7::new(p, top_down(&self.base, &p));
        let mut op = self.move_to(format!("grasp {}", x.id), x, goal, GripperAction::Grasp);
        op.expected_post.insert(
            0,
            Condition::Holding {
                node: x.id.clone(),
                class: x.semantic.class.clone(),
            },
        );
        self.ops.push(op);
        self.held = Some(x.id.clone());
    }

    fn put(&mut self, x: &ObjectNode, y: &ObjectNode) {
        let placed = self
            .graph
            .edges
            .iter()
            .any(|e| e.label == ON_LABEL && e.src == x.id && e.dst == y.id);
        let holding = self.held() == Some(&x.id);
        if self.skip_done && placed && !holding {
            return;
        }
        if !(self.skip_done && holding) {
            self.grasp(x);
        }
        self.reach(y);
        let p = y.pose().position;
        let at = Vector3::new(
            p.x,
            p.y,
            top_of(y) + 2.0 * x.attributes.shape.half_height() + PLACE_CLEARANCE,
        );
        let goal = Pose7::new(at, top_down(&self.base, &at));
        let mut op = self.move_to(format!("place {} on {}", x.id, y.id), y, goal, GripperAction::Release);
        op.expected_post = vec![
            Condition::NotHolding,
            Condition::PlacedOn {
                node: x.id.clone(),
                support: y.id.clone(),
                support_class: y.semantic.class.clone(),
            },
        ];
        self.ops.push(op);
        self.held = None;
    }

    fn articulate(&mut self, n: &ObjectNode, part: &str, open: bool) {
        let p = n.part(part).expect("grounded part exists");
        let want = if open { PartState::Open } else { PartState::Closed };
        let holding = self.held() == Some(&n.id);
        if self.skip_done && p.state == want && !holding {
            return;
        }
        let handle = p.handle.unwrap_or(n.pose().position);
        let orient = horizontal(&-p.axis);
        if !(self.skip_done && holding) {
            self.free_gripper(&n.id);
            self.reach(n);
            let goal = Pose7::new(handle, orient);
            let mut op = self.move_to(format!("grasp {part} of {}", n.id), n, goal, GripperAction::Grasp);
            op.expected_post.insert(
                0,
                Condition::Holding {
                    node: n.id.clone(),
                    class: n.semantic.class.clone(),
                },
            );
            self.ops.push(op);
        }
        let sign = if open { 1.0 } else { -1.0 };
        let req = OperateRequest {
            frame: IncrementFrame::Eef,
            t: Vector3::new(0.0, 0.0, -sign * p.travel),
            r: [0.0; 3],
        };
        let verb = if open { "open" } else { "close" };
        let mut op = self.operate(format!("{verb} {part} of {}", n.id), n, req, GripperAction::Release);
        op.expected_post = vec![
            Condition::PartState {
                node: n.id.clone(),
                part: part.to_string(),
                state: want,
            },
            Condition::NotHolding,
        ];
        self.ops.push(op);
        self.held = None;
        let moved = handle + p.axis * (sign * p.travel) + p.axis * RETREAT_DISTANCE;
        let retreat = Pose7::new(moved, orient);
        self.ops
            .push(self.move_to(format!("retreat from {}", n.id), n, retreat, GripperAction::None));
    }

    fn press(&mut self, n: &ObjectNode, part: &str) {
        let p = n.part(part).expect("grounded part exists");
        if self.skip_done && p.state == PartState::Closed {
            return;
        }
        self.free_gripper("");
        self.reach(n);
        let top = p
            .handle
            .unwrap_or_else(|| n.pose().position + Vector3::new(0.0, 0.0, n.attributes.shape.half_height()));
        let above = top + Vector3::new(0.0, 0.0, PRESS_STANDOFF);
        let goal = Pose7::new(above, top_down(&self.base, &top));
        self.ops
            .push(self.move_to(format!("approach {}", n.id), n, goal, GripperAction::None));
        let down = OperateRequest {
            frame: IncrementFrame::Base,
            t: Vector3::new(0.0, 0.0, -PRESS_STANDOFF),
            r: [0.0; 3],
        };
        let mut op = self.operate(format!("press {}", n.id), n, down, GripperAction::None);
        op.expected_post = vec![Condition::PartState {
            node: n.id.clone(),
            part: part.to_string(),
            state: PartState::Closed,
        }];
        self.ops.push(op);
        let up = OperateRequest {
            frame: IncrementFrame::Base,
            t: Vector3::new(0.0, 0.0, PRESS_STANDOFF),
            r: [0.0; 3],
        };
        let mut op = self.operate(format!("lift off {}", n.id), n, up, GripperAction::None);
        op.expected_post = vec![eef_at(goal)];
        self.ops.push(op);
    }

    fn pour(&mut self, x: &ObjectNode, y: &ObjectNode) {
        let holding = self.held() == Some(&x.id);
        let mut home = x.pose().position;
        if self.skip_done && holding {
            home.z = x.attributes.shape.half_height();
        } else {
            self.grasp(x);
        }
        let home_base = self.base;
        self.reach(y);
        let holding_x = Condition::Holding {
            node: x.id.clone(),
            class: x.semantic.class.clone(),
        };
        let p = y.pose().position;
        let at = Vector3::new(p.x, p.y, top_of(y) + POUR_HEIGHT);
        let goal = Pose7::new(at, top_down(&self.base, &at));
        let mut op = self.move_to(format!("carry {} over {}", x.id, y.id), y, goal, GripperAction::None);
        op.expected_post.insert(0, holding_x.clone());
        self.ops.push(op);
        for (label, angle) in [("tilt", POUR_TILT), ("untilt", -POUR_TILT)] {
            let req = OperateRequest {
                frame: IncrementFrame::Eef,
                t: Vector3::zeros(),
                r: [0.0, angle, 0.0],
            };
            let mut op = self.operate(format!("{label} {}", x.id), y, req, GripperAction::None);
            op.expected_post = vec![holding_x.clone()];
            self.ops.push(op);
        }
        if home_base != self.base {
            self.reach(x);
        }
        let goal = Pose7::new(home, top_down(&self.base, &home));
        let mut op = self.move_to(format!("return {}", x.id), x, goal, GripperAction::Release);
        op.reference = None;
        op.expected_post = vec![
            Condition::NotHolding,
            Condition::ObjectAt {
                node: x.id.clone(),
                pose: *x.pose(),
                tol: OBJECT_AT_TOLERANCE,
            },
        ];
        self.ops.push(op);
        self.held = None;
    }
}

/// Deterministic template planner with table-driven diagnosis.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedPlanner;

impl RuleBasedPlanner {
    fn build(
        &self,
        command: &str,
        ctx: &PlanContext,
        graph: &SceneGraph,
        skip_done: bool,
    ) -> Result<OperationSequence, AgentError> {
        let clauses = parse_command(command)?;
        let mut b = Builder {
            graph,
            tools: &ctx.tools,
            base: ctx.base,
            skip_done,
            held: graph.held().cloned(),
            eef: ctx.eef,
            ops: Vec::new(),
        };
        for c in &clauses {
            match c {
                Clause::Put { object, dest } => {
                    let x = ground(graph, object)?;
                    let y = ground(graph, dest)?;
                    b.put(x, y);
                }
                Clause::Articulate { part, object, open } => {
                    let (n, p) = ground_part(graph, part.as_deref(), object)?;
                    b.articulate(n, &p, *open);
                }
                Clause::Press { object } => {
                    let (n, p) = ground_part(graph, None, object)?;
                    b.press(n, &p);
                }
                Clause::Pour { object, dest } => {
                    let x = ground(graph, object)?;
                    let y = ground(graph, dest)?;
                    b.pour(x, y);
                }
            }
        }
        let seq = OperationSequence {
            ops: b.ops,
            source_command: command.to_string(),
        };
        for op in &seq.ops {
            op.validate().map_err(AgentError::InvalidPlan)?;
        }
        Ok(seq)
    }
}

impl TaskPlanner for RuleBasedPlanner {
    fn decompose(
        &mut self,
        command: &str,
        ctx: &PlanContext,
        graph: &SceneGraph,
    ) -> Result<OperationSequence, AgentError> {
        self.build(command, ctx, graph, false)
    }

    fn diagnose(&mut self, trace: &ExecutionTrace, graph: &SceneGraph) -> Diagnosis {
        diagnose_rules(trace, graph)
    }

    fn replan(
        &mut self,
        graph: &SceneGraph,
        command: &str,
        _memory: &MemoryStore,
        ctx: &PlanContext,
    ) -> Result<OperationSequence, AgentError> {
        self.build(command, ctx, graph, true)
    }
}

/// The diagnosis table applied to the latest trace record.
pub fn diagnose_rules(trace: &ExecutionTrace, graph: &SceneGraph) -> Diagnosis {
    let Some(r) = trace.last() else {
        return Diagnosis {
            category: DiagnosisCategory::Unknown,
            detail: "empty trace".into(),
            residual: 0.0,
        };
    };
    let d = |category, detail: String, residual| Diagnosis {
        category,
        detail,
        residual,
    };
    match r.tool_error {
        Some(ToolErrorKind::Kinematic | ToolErrorKind::Planning) => {
            return d(
                DiagnosisCategory::KinematicInfeasible,
                r.tool.error.clone().unwrap_or_default(),
                0.0,
            )
        }
        Some(kind) => return d(DiagnosisCategory::Unknown, format!("tool failure {kind:?}"), 0.0),
        None => {}
    }
    if !r.sim.contacts.is_empty() {
        return d(
            DiagnosisCategory::Collision,
            format!("contact with {}", r.sim.contacts.join(", ")),
            0.0,
        );
    }
    let residual = match (&r.op.reference, graph.nodes.get(&r.op.target)) {
        (Some(reference), Some(n)) => (n.pose().position - reference.position).norm(),
        _ => 0.0,
    };
    if residual > DISPLACEMENT_THRESHOLD {
        return d(
            DiagnosisCategory::TargetDisplaced,
            format!("{} moved {residual:.3} m", r.op.target),
            residual,
        );
    }
    let pose_missed = r
        .verification
        .checks
        .iter()
        .any(|c| matches!(c.condition, Condition::EefAt { .. }) && !c.geometric);
    if let Some(ik) = r.ik.filter(|ik| ik.relax_rounds > 0 && pose_missed) {
        return d(
            DiagnosisCategory::KinematicInfeasible,
            format!(
                "goal only reachable with relaxed tolerances ({} rounds, {:.3} m)",
                ik.relax_rounds, ik.position_error
            ),
            ik.position_error,
        );
    }
    let held = graph.held();
    let expected_hold = r.op.expected_post.iter().find_map(|c| match c {
        Condition::Holding { node, .. } => Some(node),
        _ => None,
    });
    if let Some(node) = expected_hold {
        if held.is_none() {
            return if residual > MISLOCALIZATION_THRESHOLD {
                d(
                    DiagnosisCategory::OcclusionMislocalization,
                    format!("gripper empty, {node} observed {residual:.3} m from where it was planned"),
                    residual,
                )
            } else {
                d(
                    DiagnosisCategory::GraspSlippage,
                    format!("gripper empty, expected {node}"),
                    residual,
                )
            };
        }
    }
    for c in &r.op.expected_post {
        if let Condition::PlacedOn { node, .. } = c {
            let on_something = graph.edges.iter().any(|e| e.label == ON_LABEL && &e.src == node);
            if held != Some(node) && !on_something {
                return d(
                    DiagnosisCategory::SceneTopologyChange,
                    format!("{node} is neither held nor resting on a tracked support"),
                    residual,
                );
            }
        }
    }
    let failed: Vec<String> = r
        .verification
        .checks
        .iter()
        .filter(|c| !(c.geometric && c.semantic))
        .map(|c| c.detail.clone())
        .collect();
    d(DiagnosisCategory::Unknown, failed.join("; "), residual)
}

/// Adjusts a failed move without changing the task structure.
pub fn repair_local(op: &Operation, diagnosis: &Diagnosis, graph: &SceneGraph) -> Result<Operation, AgentError> {
    let category = diagnosis.category;
    let OpPayload::MoveTo(req) = &op.payload else {
        return Err(AgentError::NotLocallyRepairable(category));
    };
    if !category.is_local() {
        return Err(AgentError::NotLocallyRepairable(category));
    }
    let mut req = req.clone();
    let mut out = op.clone();
    let old_goal = req.goal;
    match category {
        DiagnosisCategory::GraspSlippage | DiagnosisCategory::OcclusionMislocalization => {
            let node = graph
                .node(&op.target)
                .map_err(|_| AgentError::GroundingFailure(op.target.clone()))?;
            if let Some(reference) = op.reference {
                req.goal.position += node.pose().position - reference.position;
            }
            out.reference = Some(*node.pose());
            if category == DiagnosisCategory::GraspSlippage {
                out.aperture = Some(op.aperture.unwrap_or(node.kinematic.grasp_aperture) * APERTURE_SHRINK);
            }
        }
        _ => {
            let approach = req.goal.orientation * Vector3::z();
            req.goal.position -= approach * APPROACH_BACKOFF;
        }
    }
    for c in out.expected_post.iter_mut() {
        if let Condition::EefAt { pose, .. } = c {
            if *pose == old_goal {
                *pose = req.goal;
            }
        }
    }
    out.payload = OpPayload::MoveTo(req);
    Ok(out)
}
