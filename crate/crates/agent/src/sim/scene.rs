//! Primitive-shape bodies, articulated parts and analytic depth rendering.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::Pose7;
use unimanip_core::occupancy::{DepthImage, Intrinsics, OccupancyError};
use unimanip_core::scene_graph::{PartState, Shape};

fn default_aperture() -> f64 {
    0.06
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    /// Slides along its axis between 0 and `travel` (drawers).
    #[default]
    Prismatic,
    /// Latches once pressed.
    Button,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub name: String,
    pub function: String,
    #[serde(default)]
    pub kind: PartKind,
    /// Opening direction in the body frame.
    #[serde(default = "default_axis")]
    pub axis: Vector3<f64>,
    #[serde(default)]
    pub travel: f64,
    /// Handle (or button top) in the body frame at zero opening.
    pub handle: Vector3<f64>,
    #[serde(default)]
    pub opening: f64,
    #[serde(default)]
    pub latched: bool,
}

fn default_axis() -> Vector3<f64> {
    Vector3::new(-1.0, 0.0, 0.0)
}

/// Open within 1 cm of full travel, closed within 1 cm of zero.
pub const PART_STATE_TOLERANCE: f64 = 0.01;

impl PartSpec {
    pub fn state(&self) -> PartState {
        match self.kind {
            PartKind::Button => {
                if self.latched {
                    PartState::Closed
                } else {
                    PartState::Open
                }
            }
            PartKind::Prismatic => {
                if self.opening >= self.travel - PART_STATE_TOLERANCE {
                    PartState::Open
                } else if self.opening <= PART_STATE_TOLERANCE {
                    PartState::Closed
                } else {
                    PartState::Partial
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub id: String,
    pub label: String,
    pub shape: Shape,
    pub pose: Pose7,
    #[serde(default)]
    pub graspable: bool,
    #[serde(default = "default_aperture")]
    pub aperture: f64,
    #[serde(default)]
    pub color: String,
    #[serde(default)]
    pub material: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub parts: Vec<PartSpec>,
    #[serde(default)]
    pub distractor: bool,
    /// Bodies sharing a group are one physical object (e.g. basket walls).
    #[serde(default)]
    pub group: Option<String>,
    /// Whether the perception oracle reports this body.
    #[serde(default = "yes")]
    pub perceived: bool,
}

impl Body {
    pub fn new(id: &str, label: &str, shape: Shape, position: Vector3<f64>) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            shape,
            pose: Pose7::from_position(position),
            graspable: false,
            aperture: default_aperture(),
            color: String::new(),
            material: String::new(),
            context: String::new(),
            parts: Vec::new(),
            distractor: false,
            group: None,
            perceived: true,
        }
    }

    pub fn top_z(&self) -> f64 {
        self.pose.position.z + self.shape.half_height()
    }

    pub fn bottom_z(&self) -> f64 {
        self.pose.position.z - self.shape.half_height()
    }

    pub fn part(&self, name: &str) -> Option<&PartSpec> {
        self.parts.iter().find(|p| p.name == name)
    }

    pub fn part_axis_world(&self, part: &PartSpec) -> Vector3<f64> {
        (self.pose.orientation * part.axis).normalize()
    }

    /// Current handle position in the world.
    pub fn handle_world(&self, part: &PartSpec) -> Vector3<f64> {
        self.pose.position + self.pose.orientation * part.handle + self.part_axis_world(part) * part.opening
    }

    fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.orientation.inverse() * (p - self.pose.position)
    }

    /// Whether `p` lies inside the body grown by `margin`.
    pub fn contains(&self, p: &Vector3<f64>, margin: f64) -> bool {
        let l = self.to_local(p);
        match &self.shape {
            Shape::Box { size } => (0..3).all(|i| l[i].abs() <= size[i] / 2.0 + margin),
            Shape::Cylinder { radius, height } => {
                l.z.abs() <= height / 2.0 + margin && l.xy().norm() <= radius + margin
            }
            Shape::Sphere { radius } => l.norm() <= radius + margin,
            Shape::MeshRef { .. } => false,
        }
    }

    /// Whether the vertical line through `(x, y)` crosses the body's footprint.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let l = self.to_local(&Vector3::new(x, y, self.pose.position.z));
        self.shape.footprint_contains(l.x, l.y)
    }

    /// Distance along `dir` from `origin` to the first surface hit, if any.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let inv = self.pose.orientation.inverse();
        let o = inv * (origin - self.pose.position);
        let d = inv * dir;
        let t = match &self.shape {
            Shape::Box { size } => ray_box(&o, &d, &(Vector3::from(*size) / 2.0)),
            Shape::Sphere { radius } => ray_sphere(&o, &d, *radius),
            Shape::Cylinder { radius, height } => ray_cylinder(&o, &d, *radius, height / 2.0),
            Shape::MeshRef { .. } => None,
        }?;
        (t > 1e-12).then_some(t)
    }
}

fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, half: &Vector3<f64>) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let a = (-half[i] - o[i]) / d[i];
        let b = (half[i] - o[i]) / d[i];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    if t0 > t1 || t1 < 0.0 {
        return None;
    }
    Some(if t0 > 0.0 { t0 } else { t1 })
}

fn ray_sphere(o: &Vector3<f64>, d: &Vector3<f64>, r: f64) -> Option<f64> {
    let a = d.dot(d);
    let b = o.dot(d);
    let c = o.dot(o) - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = (-b - s) / a;
    let t1 = (-b + s) / a;
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

fn ray_cylinder(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, h: f64) -> Option<f64> {
    let mut best = f64::INFINITY;
    // side
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / a, (-b + s) / a] {
                if t > 0.0 && (o.z + t * d.z).abs() <= h {
                    best = best.min(t);
                }
            }
        }
    }
    // caps
    if d.z.abs() > 1e-15 {
        for zc in [-h, h] {
            let t = (zc - o.z) / d.z;
            if t > 0.0 {
                let p = o + d * t;
                if p.x * p.x + p.y * p.y <= r * r {
                    best = best.min(t);
                }
            }
        }
    }
    best.is_finite().then_some(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SimScene {
    pub bodies: Vec<Body>,
}

impl SimScene {
    pub fn body(&self, id: &str) -> Option<&Body> {
        self.bodies.iter().find(|b| b.id == id)
    }

    pub fn body_mut(&mut self, id: &str) -> Option<&mut Body> {
        self.bodies.iter_mut().find(|b| b.id == id)
    }

    /// Ids of every body in the same physical object as `id`, itself included.
    pub fn group_of(&self, id: &str) -> Vec<String> {
        let Some(body) = self.body(id) else {
            return Vec::new();
        };
        match &body.group {
            Some(g) => self
                .bodies
                .iter()
                .filter(|b| b.group.as_ref() == Some(g) || b.id == id)
                .map(|b| b.id.clone())
                .collect(),
            None => vec![id.to_string()],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.bodies {
            if !seen.insert(b.id.as_str()) {
                return Err(format!("duplicate body id {}", b.id));
            }
            if matches!(b.shape, Shape::MeshRef { .. }) {
                return Err(format!("body {}: mesh shapes are not simulated", b.id));
            }
            if !b.shape.is_valid() {
                return Err(format!("body {}: dimensions must be positive", b.id));
            }
            if !b.pose.is_finite() {
                return Err(format!("body {}: non-finite pose", b.id));
            }
            if !(b.aperture > 0.0) {
                return Err(format!("body {}: aperture must be positive", b.id));
            }
            for p in &b.parts {
                if p.axis.norm() < 1e-9 || p.travel < 0.0 {
                    return Err(format!("body {} part {}: bad axis or travel", b.id, p.name));
                }
            }
        }
        Ok(())
    }

    /// Highest support top below `below_z` whose footprint contains `(x, y)`.
    /// The table plane `z = 0` is the fallback.
    pub fn support_height(&self, x: f64, y: f64, below_z: f64, exclude: &[String]) -> (f64, Option<String>) {
        let mut best = (0.0, None);
        for b in &self.bodies {
            if exclude.contains(&b.id) {
                continue;
            }
            let top = b.top_z();
            if top <= below_z + 1e-6 && top > best.0 && b.footprint_contains(x, y) {
                best = (top, Some(b.id.clone()));
            }
        }
        best
    }
}

/// Camera-z depth of the nearest surface along every pixel ray; 0 on a miss.
pub fn render_depth(
    scene: &SimScene,
    camera_pose: &Pose7,
    intrinsics: &Intrinsics,
    width: usize,
    height: usize,
    exclude: &[String],
) -> Result<DepthImage, OccupancyError> {
    intrinsics.validate()?;
    let rot: UnitQuaternion<f64> = camera_pose.orientation;
    let origin = camera_pose.position;
    let bodies: Vec<&Body> = scene.bodies.iter().filter(|b| !exclude.contains(&b.id)).collect();
    let mut depth = vec![0.0; width * height];
    for v in 0..height {
        for u in 0..width {
            // unit camera-z component, so the ray parameter is the depth
            let dc = Vector3::new(
                (u as f64 - intrinsics.cx) / intrinsics.fx,
                (v as f64 - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
            let dw = rot * dc;
            let hit = bodies
                .iter()
                .filter_map(|b| b.intersect(&origin, &dw))
                .fold(f64::INFINITY, f64::min);
            if hit.is_finite() {
                depth[v * width + u] = hit;
            }
        }
    }
    DepthImage::new(width, height, depth, *intrinsics, *camera_pose)
}
