//! Object-centric episodic world model.
//!
//! Every node carries four blocks of state: semantic configuration (class,
//! role, free-text context), kinematic constraints (articulation flag, grasp
//! aperture, pose in the base frame), physical attributes, and the operational
//! part decomposition with per-part mechanism state. Edges are labelled
//! relations added and removed by tool invocations during execution.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::Pose7;

/// Widest opening of the simulated parallel gripper (m).
pub const GRIPPER_MAX_OPENING: f64 = 0.1;

/// Edge label recording that the gripper currently holds the node (self-loop).
pub const HELD_LABEL: &str = "held";

pub type NodeId = String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("missing node {0}")]
    MissingNode(NodeId),
    #[error("node {node} has no part {part}")]
    MissingPart { node: NodeId, part: String },
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Container,
    Manipulatable,
    ArticulatedFixture,
    Surface,
    Other,
}

/// Class-name → role table used when instantiating nodes.
pub const ROLE_LEXICON: &[(&str, Role)] = &[
    ("plate", Role::Container),
    ("bowl", Role::Container),
    ("basket", Role::Container),
    ("bin", Role::Container),
    ("tray", Role::Container),
    ("drawer", Role::ArticulatedFixture),
    ("cabinet", Role::ArticulatedFixture),
    ("table", Role::Surface),
    ("shelf", Role::Surface),
];

/// Looks up the role for an object class; unknown classes are manipulatable.
pub fn role_for_class(class: &str) -> Role {
    let lower = class.to_lowercase();
    lower
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .rev()
        .find_map(|tok| ROLE_LEXICON.iter().find(|(name, _)| *name == tok).map(|(_, r)| *r))
        .unwrap_or(Role::Manipulatable)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticConfig {
    pub class: String,
    pub role: Role,
    #[serde(default)]
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicConstraint {
    pub articulated: bool,
    pub grasp_aperture: f64,
    pub pose: Pose7,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    MeshRef { name: String },
}

impl Shape {
    pub fn is_valid(&self) -> bool {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match self {
            Shape::Box { size } => size.iter().all(|v| pos(*v)),
            Shape::Cylinder { radius, height } => pos(*radius) && pos(*height),
            Shape::Sphere { radius } => pos(*radius),
            Shape::MeshRef { name } => !name.is_empty(),
        }
    }

    /// Half extent along the vertical axis for an upright body.
    pub fn half_height(&self) -> f64 {
        match self {
            Shape::Box { size } => size[2] / 2.0,
            Shape::Cylinder { height, .. } => height / 2.0,
            Shape::Sphere { radius } => *radius,
            Shape::MeshRef { .. } => 0.0,
        }
    }

    /// Whether the horizontal offset `(dx, dy)` from the body centre lies over
    /// its footprint (axis-aligned approximation for boxes).
    pub fn footprint_contains(&self, dx: f64, dy: f64) -> bool {
        match self {
            Shape::Box { size } => dx.abs() <= size[0] / 2.0 && dy.abs() <= size[1] / 2.0,
            Shape::Cylinder { radius, .. } | Shape::Sphere { radius } => dx * dx + dy * dy <= radius * radius,
            Shape::MeshRef { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalAttributes {
    #[serde(default)]
    pub color: String,
    pub shape: Shape,
    #[serde(default)]
    pub material: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartState {
    Open,
    Closed,
    Partial,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    pub function: String,
    pub state: PartState,
    /// Unit direction of the part's travel, base frame.
    pub axis: Vector3<f64>,
    pub travel: f64,
    /// Where the part is actuated (handle, button top), base frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handle: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: NodeId,
    pub semantic: SemanticConfig,
    pub kinematic: KinematicConstraint,
    pub attributes: PhysicalAttributes,
    pub parts: Vec<Part>,
    /// Perception track this node was instantiated from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl ObjectNode {
    pub fn part(&self, name: &str) -> Option<&Part> {
        self.parts.iter().find(|p| p.name == name)
    }

    pub fn pose(&self) -> &Pose7 {
        &self.kinematic.pose
    }

    fn tokens(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let texts = [
            self.semantic.class.as_str(),
            self.semantic.context.as_str(),
            self.attributes.color.as_str(),
        ];
        for t in texts.into_iter().chain(self.parts.iter().map(|p| p.function.as_str())) {
            out.extend(tokenize(t));
        }
        out
    }
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub label: String,
}

/// One detected part of an object, as delivered by perception.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartDetection {
    pub name: String,
    pub function: String,
    pub axis: Vector3<f64>,
    pub travel: f64,
    #[serde(default)]
    pub handle: Option<Vector3<f64>>,
    #[serde(default)]
    pub state: Option<PartState>,
}

/// One perceived object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub pose: Pose7,
    pub shape: Shape,
    pub aperture: f64,
    #[serde(default)]
    pub parts: Vec<PartDetection>,
    #[serde(default)]
    pub color: String,
    #[serde(default)]
    pub material: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub source: Option<String>,
}

impl Detection {
    pub fn new(label: &str, pose: Pose7, shape: Shape, aperture: f64) -> Self {
        Self {
            label: label.to_string(),
            pose,
            shape,
            aperture,
            parts: Vec::new(),
            color: String::new(),
            material: String::new(),
            context: String::new(),
            source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SceneGraph {
    pub nodes: BTreeMap<NodeId, ObjectNode>,
    pub edges: BTreeSet<Edge>,
    pub timestamp: u64,
}

/// Immutable copy of a graph at a given timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub timestamp: u64,
    pub graph: Arc<SceneGraph>,
}

impl SceneGraph {
    /// One node per detection, no edges, timestamp 0. Repeated labels get
    /// `_1`, `_2`, … suffixes in detection order.
    pub fn instantiate(detections: &[Detection]) -> Result<Self, GraphError> {
        let mut graph = SceneGraph::default();
        for d in detections {
            if d.label.trim().is_empty() {
                return Err(GraphError::InvalidDetection("empty label".into()));
            }
            if !d.pose.is_finite() {
                return Err(GraphError::InvalidDetection(format!("{}: non-finite pose", d.label)));
            }
            if !(d.aperture > 0.0 && d.aperture <= GRIPPER_MAX_OPENING) {
                return Err(GraphError::InvalidDetection(format!(
                    "{}: aperture {} outside (0, {GRIPPER_MAX_OPENING}]",
                    d.label, d.aperture
                )));
            }
            if !d.shape.is_valid() {
                return Err(GraphError::InvalidDetection(format!(
                    "{}: invalid shape {:?}",
                    d.label, d.shape
                )));
            }
            let mut names = BTreeSet::new();
            let mut parts = Vec::with_capacity(d.parts.len());
            for p in &d.parts {
                if !names.insert(p.name.as_str()) {
                    return Err(GraphError::InvalidDetection(format!(
                        "{}: duplicate part {}",
                        d.label, p.name
                    )));
                }
                let n = p.axis.norm();
                if !n.is_finite() || n < 1e-9 {
                    return Err(GraphError::InvalidDetection(format!(
                        "{}: part {} has a degenerate axis",
                        d.label, p.name
                    )));
                }
                parts.push(Part {
                    name: p.name.clone(),
                    function: p.function.clone(),
                    state: p.state.unwrap_or(PartState::Unknown),
                    axis: p.axis / n,
                    travel: p.travel,
                    handle: p.handle,
                });
            }

            let base = d.label.trim().to_string();
            let mut id = base.clone();
            let mut k = 1;
            while graph.nodes.contains_key(&id) {
                id = format!("{base}_{k}");
                k += 1;
            }
            let node = ObjectNode {
                id: id.clone(),
                semantic: SemanticConfig {
                    class: base.clone(),
                    role: role_for_class(&base),
                    context: d.context.clone(),
                },
                kinematic: KinematicConstraint {
                    articulated: !parts.is_empty(),
                    grasp_aperture: d.aperture,
                    pose: d.pose,
                },
                attributes: PhysicalAttributes {
                    color: d.color.clone(),
                    shape: d.shape.clone(),
                    material: d.material.clone(),
                },
                parts,
                source: d.source.clone(),
            };
            graph.nodes.insert(id, node);
        }
        Ok(graph)
    }

    pub fn node(&self, id: &str) -> Result<&ObjectNode, GraphError> {
        self.nodes
            .get(id)
            .ok_or_else(|| GraphError::MissingNode(id.to_string()))
    }

    /// Node whose perception track is `source`.
    pub fn node_by_source(&self, source: &str) -> Option<&ObjectNode> {
        self.nodes.values().find(|n| n.source.as_deref() == Some(source))
    }

    pub fn update_pose(&mut self, id: &str, pose: Pose7) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| GraphError::MissingNode(id.to_string()))?;
        node.kinematic.pose = pose;
        self.timestamp += 1;
        Ok(())
    }

    pub fn update_part_state(&mut self, id: &str, part: &str, state: PartState) -> Result<(), GraphError> {
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| GraphError::MissingNode(id.to_string()))?;
        let p = node
            .parts
            .iter_mut()
            .find(|p| p.name == part)
            .ok_or_else(|| GraphError::MissingPart {
                node: id.to_string(),
                part: part.to_string(),
            })?;
        p.state = state;
        self.timestamp += 1;
        Ok(())
    }

    pub fn add_edge(&mut self, src: &str, dst: &str, label: &str) -> Result<(), GraphError> {
        for id in [src, dst] {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::MissingNode(id.to_string()));
            }
        }
        self.edges.insert(Edge {
            src: src.to_string(),
            dst: dst.to_string(),
            label: label.to_string(),
        });
        self.timestamp += 1;
        Ok(())
    }

    /// Removes matching edges; returns how many were removed.
    pub fn remove_edges(&mut self, pred: impl Fn(&Edge) -> bool) -> usize {
        let before = self.edges.len();
        self.edges.retain(|e| !pred(e));
        let removed = before - self.edges.len();
        if removed > 0 {
            self.timestamp += 1;
        }
        removed
    }

    /// Removes a node and every edge touching it.
    pub fn remove_node(&mut self, id: &str) -> Result<ObjectNode, GraphError> {
        let node = self
            .nodes
            .remove(id)
            .ok_or_else(|| GraphError::MissingNode(id.to_string()))?;
        self.edges.retain(|e| e.src != id && e.dst != id);
        self.timestamp += 1;
        Ok(node)
    }

    /// Node currently marked as held by the gripper.
    pub fn held(&self) -> Option<&NodeId> {
        self.edges
            .iter()
            .find(|e| e.label == HELD_LABEL && e.src == e.dst)
            .map(|e| &e.src)
    }

    /// Marks `id` as held (or clears the mark with `None`).
    pub fn set_held(&mut self, id: Option<&str>) -> Result<(), GraphError> {
        if self.held().map(String::as_str) == id {
            return Ok(());
        }
        self.remove_edges(|e| e.label == HELD_LABEL);
        if let Some(id) = id {
            self.add_edge(id, id, HELD_LABEL)?;
        }
        Ok(())
    }

    /// Node ids whose class/context/color/part-function tokens overlap the
    /// query, ranked by the number of matched query tokens, ties by id.
    pub fn query_by_context(&self, text: &str) -> Vec<NodeId> {
        let query: BTreeSet<String> = tokenize(text).collect();
        let mut scored: Vec<(usize, &NodeId)> = self
            .nodes
            .iter()
            .filter_map(|(id, node)| {
                let toks = node.tokens();
                let score = query.iter().filter(|t| toks.contains(*t)).count();
                (score > 0).then_some((score, id))
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored.into_iter().map(|(_, id)| id.clone()).collect()
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            timestamp: self.timestamp,
            graph: Arc::new(self.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Every edge endpoint resolves to a live node.
    pub fn is_consistent(&self) -> bool {
        self.edges
            .iter()
            .all(|e| self.nodes.contains_key(&e.src) && self.nodes.contains_key(&e.dst))
    }
}
