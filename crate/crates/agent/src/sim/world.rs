//! Kinematic robot state and segment execution against a [`SimScene`].

use nalgebra::{Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::{KinematicChain, KinematicsError, Pose7, Transform};
use unimanip_core::primitives::{
    simulate_docking, DockingOutcome, DockingParams, GripperAction, NavigateRequest, PlanarPose, PrimitiveError,
    TrajectorySegment,
};

use unimanip_core::occupancy::{DepthImage, GridSpec, OccupancyError};

use super::scenario::CameraSpec;
use super::scene::{render_depth, PartKind, SimScene};

/// Extra reach beyond the commanded opening within which a grasp attaches (m).
pub const GRASP_MARGIN: f64 = 0.02;
/// A button latches when the tool comes this close to its top (m).
pub const PRESS_DISTANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub enum Held {
    /// A free body, rigidly attached at `offset` from the tool.
    Body {
        id: String,
        offset: Transform,
        rest: UnitQuaternion<f64>,
    },
    /// The handle of an articulated part.
    Part { body: String, part: String },
}

impl Held {
    pub fn body_id(&self) -> &str {
        match self {
            Held::Body { id, .. } => id,
            Held::Part { body, .. } => body,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gripper {
    pub open_width: f64,
    pub held: Option<Held>,
}

#[derive(Debug, Clone)]
pub struct SimRobot {
    pub chain: KinematicChain,
    pub q: Vec<f64>,
    /// Tool pose in the base frame.
    pub eef: Pose7,
    pub gripper: Gripper,
    pub base: PlanarPose,
}

pub fn planar_transform(p: &PlanarPose) -> Transform {
    Transform::new(
        Rotation3::from_axis_angle(&Vector3::z_axis(), p.theta),
        Vector3::new(p.x, p.y, 0.0),
    )
}

impl SimRobot {
    pub fn new(chain: KinematicChain, q: Vec<f64>, base: PlanarPose) -> Result<Self, KinematicsError> {
        chain.check_limits(&q)?;
        let eef = chain.forward_kinematics(&q)?;
        Ok(Self {
            chain,
            q,
            eef,
            gripper: Gripper {
                open_width: unimanip_core::scene_graph::GRIPPER_MAX_OPENING,
                held: None,
            },
            base,
        })
    }

    pub fn base_transform(&self) -> Transform {
        planar_transform(&self.base)
    }

    pub fn eef_world(&self) -> Pose7 {
        self.base_transform().compose(&self.eef.to_transform()).to_pose()
    }

    pub fn set_configuration(&mut self, q: &[f64]) -> Result<(), KinematicsError> {
        self.eef = self.chain.forward_kinematics(q)?;
        self.q = q.to_vec();
        Ok(())
    }

    pub fn held_id(&self) -> Option<&str> {
        self.gripper.held.as_ref().map(Held::body_id)
    }
}

/// What happened while a segment ran.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    /// Bodies a waypoint passed through.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasped: Option<String>,
    #[serde(default)]
    pub grasp_miss: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub released: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pressed: Vec<String>,
}

/// Per-segment execution settings.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions<'a> {
    /// Operate segments drive a held part along its axis.
    pub operate: bool,
    pub aperture: f64,
    /// Bodies exempt from the contact check (the segment's own target).
    pub ignore: &'a [String],
}

/// Moves the held body (if any) to follow the tool.
pub fn follow_tool(robot: &SimRobot, scene: &mut SimScene) {
    if let Some(Held::Body { id, offset, .. }) = &robot.gripper.held {
        let pose = robot.eef_world().to_transform().compose(offset).to_pose();
        if let Some(b) = scene.body_mut(id) {
            b.pose = pose;
        }
    }
}

/// Drops a body straight down onto the highest support under its center.
pub fn settle_body(scene: &mut SimScene, id: &str, orientation: UnitQuaternion<f64>) {
    let exclude = scene.group_of(id);
    let Some(body) = scene.body(id) else { return };
    let p = body.pose.position;
    let bottom = p.z - body.shape.half_height();
    let (top, _) = scene.support_height(p.x, p.y, bottom, &exclude);
    let body = scene.body_mut(id).expect("body exists");
    body.pose.orientation = orientation;
    body.pose.position.z = top + body.shape.half_height();
}

/// Opens the gripper; a held body settles under gravity.
pub fn release_held(robot: &mut SimRobot, scene: &mut SimScene) -> Option<String> {
    let held = robot.gripper.held.take()?;
    if let Held::Body { id, rest, .. } = &held {
        settle_body(scene, id, *rest);
    }
    robot.gripper.open_width = unimanip_core::scene_graph::GRIPPER_MAX_OPENING;
    Some(held.body_id().to_string())
}

fn try_grasp(robot: &mut SimRobot, scene: &SimScene, aperture: f64) -> Option<String> {
    if robot.gripper.held.is_some() {
        return None;
    }
    let tool = robot.eef_world();
    let reach = aperture + GRASP_MARGIN;
    let mut best: Option<(f64, Held)> = None;
    let mut consider = |d: f64, h: Held| {
        if d <= reach && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, h));
        }
    };
    for b in &scene.bodies {
        if b.graspable {
            let offset = tool.to_transform().inverse().compose(&b.pose.to_transform());
            consider(
                (b.pose.position - tool.position).norm(),
                Held::Body {
                    id: b.id.clone(),
                    offset,
                    rest: b.pose.orientation,
                },
            );
        }
        for p in b.parts.iter().filter(|p| p.kind == PartKind::Prismatic) {
            consider(
                (b.handle_world(p) - tool.position).norm(),
                Held::Part {
                    body: b.id.clone(),
                    part: p.name.clone(),
                },
            );
        }
    }
    let (_, held) = best?;
    let id = held.body_id().to_string();
    robot.gripper.held = Some(held);
    robot.gripper.open_width = aperture;
    Some(id)
}

/// Teleports the tool along `segment`, ending at `q_final` when given, then
/// applies the segment's gripper action.
pub fn step_sim(
    robot: &mut SimRobot,
    scene: &mut SimScene,
    segment: &TrajectorySegment,
    q_final: Option<&[f64]>,
    opts: StepOptions<'_>,
) -> Result<StepReport, KinematicsError> {
    let mut report = StepReport::default();
    let t_wb = robot.base_transform();
    let start = robot.eef_world();
    let held = robot.held_id().map(|id| scene.group_of(id)).unwrap_or_default();
    for wp in &segment.waypoints.poses {
        let p = t_wb.transform_point(&wp.position);
        for b in scene.bodies.iter_mut() {
            if !opts.ignore.contains(&b.id)
                && !held.contains(&b.id)
                && b.contains(&p, 0.0)
                && !report.contacts.contains(&b.id)
            {
                report.contacts.push(b.id.clone());
            }
            let pose = b.pose;
            for part in b.parts.iter_mut().filter(|p| p.kind == PartKind::Button) {
                let top = pose.position + pose.orientation * part.handle;
                if (top - p).norm() <= PRESS_DISTANCE && !part.latched {
                    part.latched = true;
                    report.pressed.push(format!("{}/{}", b.id, part.name));
                }
            }
        }
    }
    match q_final {
        Some(q) => robot.set_configuration(q)?,
        None => {
            if let Some(last) = segment.waypoints.poses.last() {
                robot.eef = *last;
            }
        }
    }
    let end = robot.eef_world();
    if opts.operate {
        if let Some(Held::Part { body, part }) = &robot.gripper.held {
            if let Some(b) = scene.body_mut(body) {
                let pose = b.pose;
                if let Some(p) = b.parts.iter_mut().find(|p| &p.name == part) {
                    let axis = (pose.orientation * p.axis).normalize();
                    let d = (end.position - start.position).dot(&axis);
                    p.opening = (p.opening + d).clamp(0.0, p.travel);
                }
            }
        }
    }
    follow_tool(robot, scene);
    match segment.gripper_action {
        GripperAction::None => {}
        GripperAction::Grasp => {
            report.grasped = try_grasp(robot, scene, opts.aperture);
            report.grasp_miss = report.grasped.is_none();
        }
        GripperAction::Release => report.released = release_held(robot, scene),
    }
    Ok(report)
}

/// Runs the docking law toward a world-frame target; held bodies ride along.
/// A target behind the camera is first brought into view by turning in place.
pub fn drive_base(
    robot: &mut SimRobot,
    scene: &mut SimScene,
    target: Vector2<f64>,
    req: &NavigateRequest,
    params: &DockingParams,
) -> Result<DockingOutcome, PrimitiveError> {
    if robot.base.observe(&target).z <= 0.0 {
        robot.base.theta = (target.y - robot.base.y).atan2(target.x - robot.base.x);
    }
    let out = simulate_docking(robot.base, target, req, params)?;
    robot.base = out.final_pose;
    follow_tool(robot, scene);
    Ok(out)
}

/// Everything a simulated episode mutates.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub scene: SimScene,
    pub robot: SimRobot,
    pub camera: CameraSpec,
    /// Mapping volume, base frame.
    pub grid: GridSpec,
    pub mobile: bool,
}

impl SimWorld {
    /// Depth image from the base-mounted camera. The returned image carries
    /// the camera pose in the base frame, so it maps into base coordinates.
    pub fn render(&self, exclude: &[String]) -> Result<DepthImage, OccupancyError> {
        let cam_base = self
            .camera
            .pose()
            .map_err(|e| OccupancyError::InvalidIntrinsics(e.to_string()))?;
        let cam_world = self.robot.base_transform().compose(&cam_base.to_transform()).to_pose();
        let mut img = render_depth(
            &self.scene,
            &cam_world,
            &self.camera.intrinsics(),
            self.camera.width,
            self.camera.height,
            exclude,
        )?;
        img.camera_pose = cam_base;
        Ok(img)
    }

    /// World pose to base frame.
    pub fn to_base(&self, p: &Pose7) -> Pose7 {
        self.robot
            .base_transform()
            .inverse()
            .compose(&p.to_transform())
            .to_pose()
    }

    pub fn to_world(&self, p: &Pose7) -> Pose7 {
        self.robot.base_transform().compose(&p.to_transform()).to_pose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{Body, PartSpec};
    use unimanip_core::planner::Waypoints;
    use unimanip_core::scene_graph::{PartState, Shape};

    fn robot() -> SimRobot {
        let chain = KinematicChain::builtin_a1();
        let q = chain.home.clone().unwrap();
        SimRobot::new(
            chain,
            q,
            PlanarPose {
                x: 0.0,
                y: 0.0,
                theta: 0.0,
            },
        )
        .unwrap()
    }

    fn segment(poses: Vec<Pose7>, action: GripperAction) -> TrajectorySegment {
        TrajectorySegment {
            waypoints: Waypoints { poses },
            gripper_action: action,
        }
    }

    fn cube(id: &str, at: Vector3<f64>) -> Body {
        let mut b = Body::new(id, id, Shape::Box { size: [0.05; 3] }, at);
        b.graspable = true;
        b
    }

    fn plate() -> Body {
        Body::new(
            "plate",
            "plate",
            Shape::Cylinder {
                radius: 0.09,
                height: 0.02,
            },
            Vector3::new(0.45, 0.15, 0.01),
        )
    }

    const OPTS: StepOptions<'static> = StepOptions {
        operate: false,
        aperture: 0.05,
        ignore: &[],
    };

    #[test]
    fn move_without_flags_leaves_scene() {
        let mut r = robot();
        let mut scene = SimScene {
            bodies: vec![cube("a", Vector3::new(0.4, 0.0, 0.025)), plate()],
        };
        let before = scene.clone();
        let to = Pose7::new(Vector3::new(0.3, 0.1, 0.3), r.eef.orientation);
        let seg = segment(vec![r.eef, to], GripperAction::None);
        let rep = step_sim(&mut r, &mut scene, &seg, None, OPTS).unwrap();
        assert_eq!(scene, before);
        assert_eq!(rep, StepReport::default());
        assert_eq!(r.eef, to);
    }

    #[test]
    fn grasp_carry_release_onto_plate() {
        let mut r = robot();
        let mut scene = SimScene {
            bodies: vec![cube("a", Vector3::new(0.4, 0.0, 0.025)), plate()],
        };
        let down = r.eef.orientation;
        let grasp = Pose7::new(Vector3::new(0.41, 0.0, 0.03), down);
        let rep = step_sim(
            &mut r,
            &mut scene,
            &segment(vec![grasp], GripperAction::Grasp),
            None,
            OPTS,
        )
        .unwrap();
        assert_eq!(rep.grasped.as_deref(), Some("a"));
        let offset = r
            .eef_world()
            .to_transform()
            .inverse()
            .compose(&scene.body("a").unwrap().pose.to_transform());

        let above = Pose7::new(
            Vector3::new(0.45, 0.15, 0.2),
            down * UnitQuaternion::from_euler_angles(0.0, 0.0, 0.4),
        );
        step_sim(
            &mut r,
            &mut scene,
            &segment(vec![grasp, above], GripperAction::None),
            None,
            OPTS,
        )
        .unwrap();
        let now = r
            .eef_world()
            .to_transform()
            .inverse()
            .compose(&scene.body("a").unwrap().pose.to_transform());
        assert!((now.translation - offset.translation).norm() < 1e-12);
        assert!(now.rotation.angle_to(&offset.rotation) < 1e-9);

        let rep = step_sim(
            &mut r,
            &mut scene,
            &segment(vec![above], GripperAction::Release),
            None,
            OPTS,
        )
        .unwrap();
        assert_eq!(rep.released.as_deref(), Some("a"));
        let a = scene.body("a").unwrap();
        assert!((a.bottom_z() - 0.02).abs() < 1e-12);
        assert!(scene
            .body("plate")
            .unwrap()
            .footprint_contains(a.pose.position.x, a.pose.position.y));
        assert_eq!(a.pose.orientation, UnitQuaternion::identity());
    }

    #[test]
    fn grasp_out_of_range_is_a_miss() {
        let mut r = robot();
        let mut scene = SimScene {
            bodies: vec![cube("a", Vector3::new(0.4, 0.0, 0.025))],
        };
        let far = Pose7::new(Vector3::new(0.4, 0.2, 0.03), r.eef.orientation);
        let rep = step_sim(
            &mut r,
            &mut scene,
            &segment(vec![far], GripperAction::Grasp),
            None,
            OPTS,
        )
        .unwrap();
        assert!(rep.grasp_miss);
        assert!(r.gripper.held.is_none());
    }

    fn cabinet() -> Body {
        let mut b = Body::new(
            "cabinet",
            "cabinet",
            Shape::Box { size: [0.2, 0.3, 0.25] },
            Vector3::new(0.6, 0.0, 0.125),
        );
        b.parts.push(PartSpec {
            name: "drawer".into(),
            function: "drawer".into(),
            kind: PartKind::Prismatic,
            axis: Vector3::new(-1.0, 0.0, 0.0),
            travel: 0.15,
            handle: Vector3::new(-0.13, 0.0, 0.02),
            opening: 0.0,
            latched: false,
        });
        b
    }

    #[test]
    fn pulling_a_handle_opens_the_drawer() {
        let mut r = robot();
        let mut scene = SimScene {
            bodies: vec![cabinet()],
        };
        let handle = scene.bodies[0].handle_world(&scene.bodies[0].parts[0]);
        let at = Pose7::new(handle, r.eef.orientation);
        step_sim(&mut r, &mut scene, &segment(vec![at], GripperAction::Grasp), None, OPTS).unwrap();
        assert!(matches!(r.gripper.held, Some(Held::Part { .. })));
        let pulled = Pose7::new(handle - Vector3::new(0.15, 0.0, 0.0), at.orientation);
        let ops = StepOptions { operate: true, ..OPTS };
        step_sim(
            &mut r,
            &mut scene,
            &segment(vec![at, pulled], GripperAction::Release),
            None,
            ops,
        )
        .unwrap();
        let part = &scene.bodies[0].parts[0];
        assert!((part.opening - 0.15).abs() < 1e-12);
        assert_eq!(part.state(), PartState::Open);
        assert!(r.gripper.held.is_none());
    }

    #[test]
    fn transit_does_not_move_parts() {
        let mut r = robot();
        let mut scene = SimScene {
            bodies: vec![cabinet()],
        };
        let handle = scene.bodies[0].handle_world(&scene.bodies[0].parts[0]);
        let at = Pose7::new(handle, r.eef.orientation);
        step_sim(&mut r, &mut scene, &segment(vec![at], GripperAction::Grasp), None, OPTS).unwrap();
        let away = Pose7::new(handle - Vector3::new(0.1, 0.0, 0.0), at.orientation);
        step_sim(
            &mut r,
            &mut scene,
            &segment(vec![at, away], GripperAction::None),
            None,
            OPTS,
        )
        .unwrap();
        assert_eq!(scene.bodies[0].parts[0].opening, 0.0);
    }

    #[test]
    fn pressing_latches() {
        let mut r = robot();
        let mut b = Body::new(
            "button",
            "button",
            Shape::Box {
                size: [0.06, 0.06, 0.04],
            },
            Vector3::new(0.4, -0.1, 0.02),
        );
        b.parts.push(PartSpec {
            name: "button".into(),
            function: "press".into(),
            kind: PartKind::Button,
            axis: Vector3::z(),
            travel: 0.0,
            handle: Vector3::new(0.0, 0.0, 0.02),
            opening: 0.0,
            latched: false,
        });
        let mut scene = SimScene { bodies: vec![b] };
        let down = r.eef.orientation;
        let above = Pose7::new(Vector3::new(0.4, -0.1, 0.1), down);
        let top = Pose7::new(Vector3::new(0.4, -0.1, 0.04), down);
        let ignore = vec!["button".to_string()];
        let opts = StepOptions {
            ignore: &ignore,
            ..OPTS
        };
        let rep = step_sim(
            &mut r,
            &mut scene,
            &segment(vec![above], GripperAction::None),
            None,
            opts,
        )
        .unwrap();
        assert!(rep.pressed.is_empty());
        let rep = step_sim(
            &mut r,
            &mut scene,
            &segment(vec![above, top], GripperAction::None),
            None,
            opts,
        )
        .unwrap();
        assert_eq!(rep.pressed, vec!["button/button".to_string()]);
        assert!(rep.contacts.is_empty());
        assert_eq!(scene.bodies[0].parts[0].state(), PartState::Closed);
    }

    #[test]
    fn contact_is_flagged() {
        let mut r = robot();
        let mut scene = SimScene {
            bodies: vec![cube("a", Vector3::new(0.4, 0.0, 0.025))],
        };
        let through = Pose7::new(Vector3::new(0.4, 0.0, 0.02), r.eef.orientation);
        let rep = step_sim(
            &mut r,
            &mut scene,
            &segment(vec![through], GripperAction::None),
            None,
            OPTS,
        )
        .unwrap();
        assert_eq!(rep.contacts, vec!["a".to_string()]);
    }

    #[test]
    fn docking_carries_the_held_body() {
        let mut r = robot();
        let mut scene = SimScene {
            bodies: vec![cube("a", Vector3::new(0.35, 0.0, 0.3))],
        };
        let here = r.eef;
        step_sim(
            &mut r,
            &mut scene,
            &segment(vec![here], GripperAction::Grasp),
            None,
            OPTS,
        )
        .unwrap();
        let out = drive_base(
            &mut r,
            &mut scene,
            Vector2::new(3.0, 1.0),
            &NavigateRequest::new("t"),
            &DockingParams::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!((scene.body("a").unwrap().pose.position - r.eef_world().position).norm() < 1e-9);
    }
}
