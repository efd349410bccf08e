//! The tool library: objective-oriented transit (`move_to`), frame-relative
//! metric motion (`operate`) and reactive base docking (`navigate`).

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{
    apply_increment, relaxed_ik, slerp, IkParams, IkSolution, IncrementFrame, KinematicChain, KinematicsError, Pose7,
};
use crate::occupancy::VoxelGrid;
use crate::planner::{compute_esdf, plan_with_esdf, Esdf, PlanError, PlannerParams, Waypoints};
use crate::scene_graph::{NodeId, SceneGraph};

/// Translation step used to discretize `operate` motions (m).
pub const OPERATE_STEP: f64 = 0.01;
/// Rotation step used to discretize `operate` motions (rad).
pub const OPERATE_ANGLE_STEP: f64 = 0.05;

pub const DEFAULT_KP: f64 = 0.6;
pub const DEFAULT_K_THETA: f64 = 0.2;
pub const DEFAULT_D_GOAL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrimitiveError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown target node {0}")]
    UnknownTarget(NodeId),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("waypoint {index} is kinematically infeasible (position error {position_error:.4} m, orientation error {orientation_error:.4} rad)")]
    SegmentInfeasible {
        index: usize,
        position_error: f64,
        orientation_error: f64,
    },
    #[error("invalid observation: depth {0} must be positive")]
    InvalidObservation(f64),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotConfig {
    Fixed,
    Mobile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    MoveTo,
    Operate,
    Navigate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSet {
    pub config: RobotConfig,
    pub tools: Vec<ToolName>,
}

impl ToolSet {
    pub fn contains(&self, tool: ToolName) -> bool {
        self.tools.contains(&tool)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

pub fn select_tool_library(config: RobotConfig) -> ToolSet {
    let mut tools = vec![ToolName::MoveTo, ToolName::Operate];
    if config == RobotConfig::Mobile {
        tools.push(ToolName::Navigate);
    }
    ToolSet { config, tools }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GripperAction {
    #[default]
    None,
    Grasp,
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveToRequest {
    pub target: NodeId,
    pub goal: Pose7,
    #[serde(default)]
    pub grasp: bool,
    #[serde(default)]
    pub release: bool,
}

impl MoveToRequest {
    pub fn validate(&self) -> Result<(), PrimitiveError> {
        if self.grasp && self.release {
            return Err(PrimitiveError::InvalidRequest(
                "grasp and release are mutually exclusive".into(),
            ));
        }
        if !self.goal.is_finite() {
            return Err(PrimitiveError::InvalidRequest("non-finite goal".into()));
        }
        Ok(())
    }

    pub fn gripper_action(&self) -> GripperAction {
        match (self.grasp, self.release) {
            (true, _) => GripperAction::Grasp,
            (_, true) => GripperAction::Release,
            _ => GripperAction::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperateRequest {
    pub frame: IncrementFrame,
    pub t: Vector3<f64>,
    #[serde(default)]
    pub r: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigateRequest {
    pub target: NodeId,
    pub d_goal: f64,
    pub kp: f64,
    pub k_theta: f64,
}

impl NavigateRequest {
    pub fn new(target: &str) -> Self {
        Self {
            target: target.to_string(),
            d_goal: DEFAULT_D_GOAL,
            kp: DEFAULT_KP,
            k_theta: DEFAULT_K_THETA,
        }
    }

    pub fn validate(&self) -> Result<(), PrimitiveError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.d_goal) && pos(self.kp) && pos(self.k_theta)) {
            return Err(PrimitiveError::InvalidRequest(format!(
                "d_goal {}, kp {}, k_theta {} must be positive",
                self.d_goal, self.kp, self.k_theta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub waypoints: Waypoints,
    /// Applied once the final waypoint is reached.
    pub gripper_action: GripperAction,
}

/// Fixed inputs shared by arm primitives.
#[derive(Debug, Clone, Copy)]
pub struct MotionContext<'a> {
    pub chain: &'a KinematicChain,
    pub ik: &'a IkParams,
    pub planner: &'a PlannerParams,
}

/// Joint-space solution of a segment, one configuration per waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPath {
    pub configurations: Vec<Vec<f64>>,
    pub max_relax_rounds: u32,
    pub max_position_error: f64,
    pub max_orientation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoveToResult {
    pub segment: TrajectorySegment,
    pub joints: JointPath,
    /// Grid path length (m).
    pub path_cost: f64,
}

fn better(a: &IkSolution, b: &IkSolution) -> bool {
    (a.relax_rounds_used, a.position_error + a.orientation_error)
        < (b.relax_rounds_used, b.position_error + b.orientation_error)
}

/// Solves IK for every pose, seeding each from the previous solution. When a
/// waypoint only solves with relaxed tolerances, a second seed interpolated
/// in joint space toward the solution of the final pose is tried as well,
/// which keeps sequential tracking from settling in a local minimum.
pub fn solve_segment_ik(
    chain: &KinematicChain,
    poses: &[Pose7],
    q_start: &[f64],
    params: &IkParams,
) -> Result<JointPath, PrimitiveError> {
    let mut seed = q_start.to_vec();
    let mut out = JointPath {
        configurations: Vec::with_capacity(poses.len()),
        max_relax_rounds: 0,
        max_position_error: 0.0,
        max_orientation_error: 0.0,
    };
    let mut guide: Option<Option<Vec<f64>>> = None;
    let last = poses.len().saturating_sub(1).max(1) as f64;
    for (index, pose) in poses.iter().enumerate() {
        let mut result = relaxed_ik(chain, pose, &seed, params);
        if !matches!(&result, Ok(sol) if sol.relax_rounds_used == 0) {
            let goal_q = guide.get_or_insert_with(|| {
                let goal = poses.last().expect("non-empty");
                relaxed_ik(chain, goal, q_start, params)
                    .ok()
                    .filter(|g| g.relax_rounds_used == 0)
                    .map(|g| g.q)
            });
            if let Some(goal_q) = goal_q {
                let a = index as f64 / last;
                let alt_seed: Vec<f64> = q_start
                    .iter()
                    .zip(goal_q.iter())
                    .map(|(s, g)| s + a * (g - s))
                    .collect();
                if let Ok(alt) = relaxed_ik(chain, pose, &alt_seed, params) {
                    match &result {
                        Ok(sol) if !better(&alt, sol) => {}
                        _ => result = Ok(alt),
                    }
                }
            }
        }
        match result {
            Ok(sol) => {
                out.max_relax_rounds = out.max_relax_rounds.max(sol.relax_rounds_used);
                out.max_position_error = out.max_position_error.max(sol.position_error);
                out.max_orientation_error = out.max_orientation_error.max(sol.orientation_error);
                seed.clone_from(&sol.q);
                out.configurations.push(sol.q);
            }
            Err(KinematicsError::IkInfeasible {
                position_error,
                orientation_error,
                ..
            }) => {
                return Err(PrimitiveError::SegmentInfeasible {
                    index,
                    position_error,
                    orientation_error,
                })
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Plans a clearance-respecting transit to `req.goal` and checks every
/// waypoint for IK feasibility.
pub fn move_to(
    req: &MoveToRequest,
    graph: &SceneGraph,
    grid: &VoxelGrid,
    eef_pose: &Pose7,
    q_current: &[f64],
    ctx: MotionContext<'_>,
) -> Result<MoveToResult, PrimitiveError> {
    move_to_with_esdf(req, graph, &compute_esdf(grid), eef_pose, q_current, ctx)
}

pub fn move_to_with_esdf(
    req: &MoveToRequest,
    graph: &SceneGraph,
    phi: &Esdf,
    eef_pose: &Pose7,
    q_current: &[f64],
    ctx: MotionContext<'_>,
) -> Result<MoveToResult, PrimitiveError> {
    req.validate()?;
    if !graph.nodes.contains_key(&req.target) {
        return Err(PrimitiveError::UnknownTarget(req.target.clone()));
    }
    let out = plan_with_esdf(eef_pose, &req.goal, phi, ctx.planner)?;
    let joints = solve_segment_ik(ctx.chain, &out.waypoints.poses, q_current, ctx.ik)?;
    Ok(MoveToResult {
        segment: TrajectorySegment {
            waypoints: out.waypoints,
            gripper_action: req.gripper_action(),
        },
        joints,
        path_cost: out.path.cost,
    })
}

/// Metric relative motion from `eef_pose`; interpolated, never collision-checked.
pub fn operate(req: &OperateRequest, eef_pose: &Pose7) -> Result<TrajectorySegment, PrimitiveError> {
    let target = apply_increment(&eef_pose.to_transform(), &req.t, &req.r, req.frame)?.to_pose();
    let dist = (target.position - eef_pose.position).norm();
    let angle = eef_pose.orientation.angle_to(&target.orientation);
    // slack keeps exact multiples of the step from gaining a sliver step
    let steps = |x: f64, step: f64| (x / step - 1e-9).ceil().max(0.0) as usize;
    let n = steps(dist, OPERATE_STEP).max(steps(angle, OPERATE_ANGLE_STEP));
    let mut poses = Vec::with_capacity(n + 1);
    poses.push(*eef_pose);
    for i in 1..=n {
        if i == n {
            poses.push(target);
            break;
        }
        let a = i as f64 / n as f64;
        let p = eef_pose.position.lerp(&target.position, a);
        let q = slerp(&eef_pose.orientation, &target.orientation, a)?;
        poses.push(Pose7::new(p, q));
    }
    Ok(TrajectorySegment {
        waypoints: Waypoints { poses },
        gripper_action: GripperAction::None,
    })
}

/// Target position in the base camera frame: `z` forward (depth), `x`
/// positive toward the base's left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DockingObservation {
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseCommand {
    pub v_x: f64,
    pub omega_z: f64,
}

/// One step of the proportional docking law.
pub fn navigate_step(obs: DockingObservation, req: &NavigateRequest) -> Result<BaseCommand, PrimitiveError> {
    req.validate()?;
    if !(obs.z > 0.0) || !obs.x.is_finite() {
        return Err(PrimitiveError::InvalidObservation(obs.z));
    }
    Ok(BaseCommand {
        v_x: req.kp * (obs.z - req.d_goal),
        omega_z: req.k_theta * obs.x.atan2(obs.z),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DockingParams {
    pub dt: f64,
    pub distance_tolerance: f64,
    pub heading_tolerance: f64,
    pub max_time: f64,
}

impl Default for DockingParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            distance_tolerance: 0.02,
            heading_tolerance: 0.02,
            max_time: 60.0,
        }
    }
}

/// Planar base pose: position and heading (rad, counter-clockwise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PlanarPose {
    /// Where `target` appears from this pose.
    pub fn observe(&self, target: &Vector2<f64>) -> DockingObservation {
        let (s, c) = self.theta.sin_cos();
        let d = target - Vector2::new(self.x, self.y);
        DockingObservation {
            x: -s * d.x + c * d.y,
            z: c * d.x + s * d.y,
        }
    }

    /// Unicycle integration of one command over `dt`.
    pub fn advance(&mut self, cmd: &BaseCommand, dt: f64) {
        let (s, c) = self.theta.sin_cos();
        self.x += cmd.v_x * c * dt;
        self.y += cmd.v_x * s * dt;
        self.theta += cmd.omega_z * dt;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DockingOutcome {
    pub converged: bool,
    pub time: f64,
    pub steps: usize,
    pub final_pose: PlanarPose,
    pub distance_error: f64,
    pub heading_error: f64,
}

/// Iterates the docking law against a static target until both stop
/// tolerances hold or the time limit runs out.
pub fn simulate_docking(
    start: PlanarPose,
    target: Vector2<f64>,
    req: &NavigateRequest,
    params: &DockingParams,
) -> Result<DockingOutcome, PrimitiveError> {
    req.validate()?;
    let mut pose = start;
    let max_steps = (params.max_time / params.dt).round() as usize;
    let mut steps = 0;
    loop {
        let obs = pose.observe(&target);
        let distance_error = (obs.z - req.d_goal).abs();
        let heading_error = obs.x.atan2(obs.z).abs();
        let converged = distance_error < params.distance_tolerance && heading_error < params.heading_tolerance;
        if converged || steps >= max_steps {
            return Ok(DockingOutcome {
                converged,
                time: steps as f64 * params.dt,
                steps,
                final_pose: pose,
                distance_error,
                heading_error,
            });
        }
        let cmd = navigate_step(obs, req)?;
        pose.advance(&cmd, params.dt);
        steps += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Failed,
}

/// Structured log entry for one tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub tool: ToolName,
    pub inputs: serde_json::Value,
    pub segment_len: usize,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}
