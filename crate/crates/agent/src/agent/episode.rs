//! Closed-loop episode executor: execute, verify, reflect, repair or replan.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::{IkParams, IncrementFrame, KinematicChain};
use unimanip_core::occupancy::{build_occupancy, Kernel};
use unimanip_core::planner::{compute_esdf, Esdf, PlannerParams};
use unimanip_core::primitives::{
    move_to_with_esdf, operate, select_tool_library, solve_segment_ik, DockingParams, JointPath, MotionContext,
    MoveToRequest, OperateRequest, PrimitiveError, ToolName, ToolRecord, ToolSet, ToolStatus,
};
use unimanip_core::scene_graph::{SceneGraph, GRIPPER_MAX_OPENING};

use crate::sim::metrics::StepOutcome;
use crate::sim::world::{drive_base, Held};
use crate::sim::{
    inject_failure, observe, perceive, step_sim, EpisodeResult, Injector, Phase, Scenario, SimWorld, StepOptions,
    StepReport,
};

use super::memory::MemoryStore;
use super::ops::{OpPayload, Operation};
use super::planner::{repair_local, DiagnosisCategory, PlanContext, TaskPlanner};
use super::trace::{Action, ExecutionTrace, IkReport, ToolErrorKind, TraceRecord, DEFAULT_TRACE_CAPACITY};
use super::verify::{sync_graph, verify, OracleVerifier};
use super::AgentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Diagnose and repair failed steps; when off the first failure ends the episode.
    pub recovery: bool,
    pub max_local_retries: u32,
    pub max_replans: u32,
    pub trace_capacity: usize,
    pub ik: IkParams,
    pub planner: PlannerParams,
    pub docking: DockingParams,
    /// Side of the cubic closing kernel (voxels, odd).
    pub kernel_side: usize,
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    /// Docking gains `[K_p, K_theta]` replacing whatever the plan supplies.
    pub docking_gains: Option<[f64; 2]>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            recovery: true,
            max_local_retries: 2,
            max_replans: 2,
            trace_capacity: DEFAULT_TRACE_CAPACITY,
            ik: IkParams::default(),
            planner: PlannerParams::default(),
            docking: DockingParams::default(),
            kernel_side: 3,
            seed: None,
            docking_gains: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub result: EpisodeResult,
    /// Every step record, unbounded.
    pub log: Vec<TraceRecord>,
    /// Length of the initial plan and of every replanned sequence, in order.
    pub plan_lengths: Vec<usize>,
    pub graph: SceneGraph,
    pub memory: MemoryStore,
    pub world: SimWorld,
}

/// Highest escape lift tried before planning from a start inside the clearance band (m).
pub const ESCAPE_MAX_LIFT: f64 = 0.15;

struct StepExec {
    tool: ToolRecord,
    error: Option<ToolErrorKind>,
    report: StepReport,
    min_clearance: Option<f64>,
    ik: Option<IkReport>,
}

fn tool_name(op: &Operation) -> ToolName {
    match op.payload {
        OpPayload::MoveTo(_) => ToolName::MoveTo,
        OpPayload::Operate(_) => ToolName::Operate,
        OpPayload::Navigate(_) => ToolName::Navigate,
    }
}

fn classify(e: &PrimitiveError) -> ToolErrorKind {
    match e {
        PrimitiveError::Plan(_) => ToolErrorKind::Planning,
        PrimitiveError::SegmentInfeasible { .. } | PrimitiveError::Kinematics(_) => ToolErrorKind::Kinematic,
        PrimitiveError::InvalidObservation(_) => ToolErrorKind::Perception,
        PrimitiveError::InvalidRequest(_) | PrimitiveError::UnknownTarget(_) => ToolErrorKind::InvalidRequest,
    }
}

fn failed(op: &Operation, kind: ToolErrorKind, message: String) -> StepExec {
    StepExec {
        tool: ToolRecord {
            tool: tool_name(op),
            inputs: serde_json::to_value(&op.payload).unwrap_or_default(),
            segment_len: 0,
            status: ToolStatus::Failed,
            error: Some(message),
        },
        error: Some(kind),
        report: StepReport::default(),
        min_clearance: None,
        ik: None,
    }
}

fn execute(
    world: &mut SimWorld,
    graph: &SceneGraph,
    op: &Operation,
    inj: &mut Injector,
    cfg: &EpisodeConfig,
) -> StepExec {
    let target_group = graph
        .nodes
        .get(&op.target)
        .and_then(|n| n.source.as_deref())
        .map(|s| world.scene.group_of(s))
        .unwrap_or_default();
    let held_group = world
        .robot
        .held_id()
        .map(|h| world.scene.group_of(h))
        .unwrap_or_default();
    let chain = inj
        .chain_for_segment(&world.robot.chain)
        .unwrap_or_else(|| world.robot.chain.clone());
    let mut min_clearance = None;
    let mut lifted = 0;
    let ik;
    let (segment, q_final, operate_step) = match &op.payload {
        OpPayload::MoveTo(req) => {
            let mut exclude = held_group.clone();
            if !req.release {
                exclude.extend(target_group.iter().cloned());
            }
            let kernel = match Kernel::cube(cfg.kernel_side) {
                Ok(k) => k,
                Err(e) => return failed(op, ToolErrorKind::InvalidRequest, e.to_string()),
            };
            let stages = world.render(&exclude).and_then(|mut img| {
                inj.corrupt_depth(&mut img);
                build_occupancy(&img, world.grid, kernel)
            });
            let stages = match stages {
                Ok(s) => s,
                Err(e) => return failed(op, ToolErrorKind::Perception, e.to_string()),
            };
            let phi = compute_esdf(&stages.completed);
            lifted = match escape_lift(world, &phi, &chain, &target_group, cfg) {
                Ok(n) => n,
                Err(e) => return failed(op, ToolErrorKind::Kinematic, e),
            };
            let req_base = MoveToRequest {
                goal: world.to_base(&req.goal),
                ..req.clone()
            };
            let ctx = MotionContext {
                chain: &chain,
                ik: &cfg.ik,
                planner: &cfg.planner,
            };
            match move_to_with_esdf(&req_base, graph, &phi, &world.robot.eef, &world.robot.q, ctx) {
                Ok(res) => {
                    min_clearance = res
                        .segment
                        .waypoints
                        .poses
                        .iter()
                        .filter_map(|w| phi.at_point(&w.position))
                        .reduce(f64::min);
                    ik = Some(ik_report(&res.joints));
                    (res.segment, res.joints.configurations.last().cloned(), false)
                }
                Err(e) => return failed(op, classify(&e), e.to_string()),
            }
        }
        OpPayload::Operate(req) => {
            let seg = operate(req, &world.robot.eef).and_then(|mut seg| {
                seg.gripper_action = op.gripper;
                let joints = solve_segment_ik(&chain, &seg.waypoints.poses, &world.robot.q, &cfg.ik)?;
                Ok((seg, joints))
            });
            match seg {
                Ok((seg, joints)) => {
                    ik = Some(ik_report(&joints));
                    (seg, joints.configurations.last().cloned(), true)
                }
                Err(e) => return failed(op, classify(&e), e.to_string()),
            }
        }
        OpPayload::Navigate(req) => {
            let Some(node) = graph.nodes.get(&req.target) else {
                return failed(
                    op,
                    ToolErrorKind::InvalidRequest,
                    format!("unknown target node {}", req.target),
                );
            };
            let p = node.pose().position;
            let mut req = req.clone();
            if let Some([kp, k_theta]) = cfg.docking_gains {
                req.kp = kp;
                req.k_theta = k_theta;
            }
            return match drive_base(
                &mut world.robot,
                &mut world.scene,
                Vector2::new(p.x, p.y),
                &req,
                &cfg.docking,
            ) {
                Ok(out) if out.converged => StepExec {
                    tool: ToolRecord {
                        tool: ToolName::Navigate,
                        inputs: serde_json::to_value(&op.payload).unwrap_or_default(),
                        segment_len: out.steps,
                        status: ToolStatus::Ok,
                        error: None,
                    },
                    error: None,
                    report: StepReport::default(),
                    min_clearance: None,
                    ik: None,
                },
                Ok(out) => failed(
                    op,
                    ToolErrorKind::Planning,
                    format!("docking did not converge in {:.1} s", out.time),
                ),
                Err(e) => failed(op, classify(&e), e.to_string()),
            };
        }
    };
    let aperture = op.aperture.unwrap_or(GRIPPER_MAX_OPENING);
    let opts = StepOptions {
        operate: operate_step,
        aperture,
        ignore: &target_group,
    };
    match step_sim(&mut world.robot, &mut world.scene, &segment, q_final.as_deref(), opts) {
        Ok(report) => StepExec {
            tool: ToolRecord {
                tool: tool_name(op),
                inputs: serde_json::to_value(&op.payload).unwrap_or_default(),
                segment_len: lifted + segment.waypoints.len(),
                status: ToolStatus::Ok,
                error: None,
            },
            error: None,
            report,
            min_clearance,
            ik,
        },
        Err(e) => failed(op, ToolErrorKind::Kinematic, e.to_string()),
    }
}

/// Raises the tool straight up out of the clearance band around its current
/// position so the planner gets a feasible start. Returns the waypoints
/// executed; zero when the start is already clear, a part is held, or no
/// clear height exists within `ESCAPE_MAX_LIFT`.
fn escape_lift(
    world: &mut SimWorld,
    phi: &Esdf,
    chain: &KinematicChain,
    ignore: &[String],
    cfg: &EpisodeConfig,
) -> Result<usize, String> {
    let r_safe = cfg.planner.r_safe;
    let start = world.robot.eef;
    let clear = |dz: f64| {
        phi.at_point(&(start.position + Vector3::z() * dz))
            .is_some_and(|d| d >= r_safe)
    };
    if clear(0.0) || matches!(world.robot.gripper.held, Some(Held::Part { .. })) {
        return Ok(0);
    }
    let step = phi.spec.resolution;
    let Some(dz) = (1..=(ESCAPE_MAX_LIFT / step).round() as usize)
        .map(|i| i as f64 * step)
        .find(|dz| clear(*dz))
    else {
        return Ok(0);
    };
    let req = OperateRequest {
        frame: IncrementFrame::Base,
        t: Vector3::new(0.0, 0.0, dz),
        r: [0.0; 3],
    };
    let seg = operate(&req, &start).map_err(|e| e.to_string())?;
    let joints = solve_segment_ik(chain, &seg.waypoints.poses, &world.robot.q, &cfg.ik).map_err(|e| e.to_string())?;
    let opts = StepOptions {
        operate: false,
        aperture: GRIPPER_MAX_OPENING,
        ignore,
    };
    step_sim(
        &mut world.robot,
        &mut world.scene,
        &seg,
        joints.configurations.last().map(|q| q.as_slice()),
        opts,
    )
    .map_err(|e| e.to_string())?;
    Ok(seg.waypoints.len())
}

fn ik_report(j: &JointPath) -> IkReport {
    IkReport {
        relax_rounds: j.max_relax_rounds,
        position_error: j.max_position_error,
        orientation_error: j.max_orientation_error,
    }
}

fn plan_context(world: &SimWorld, tools: &ToolSet) -> PlanContext {
    PlanContext {
        tools: tools.clone(),
        eef: world.robot.eef_world(),
        base: world.robot.base,
    }
}

/// Runs one scenario to completion or until the recovery budget is spent.
pub fn run_episode(
    scenario: &Scenario,
    planner: &mut dyn TaskPlanner,
    cfg: &EpisodeConfig,
) -> Result<EpisodeOutput, AgentError> {
    let started = Instant::now();
    let seed = cfg.seed.unwrap_or(scenario.config.seed);
    let mut world = scenario
        .build_world()
        .map_err(|e| AgentError::Scenario(e.to_string()))?;
    let tools = select_tool_library(scenario.config.robot);
    let mut inj = Injector::new(&scenario.injection, seed);
    inject_failure(&mut inj, Phase::Start, 0, &[], &mut world);
    let detections = perceive(&world.scene, &inj.take_coarse());
    let mut graph = SceneGraph::instantiate(&detections).map_err(|e| AgentError::Scenario(e.to_string()))?;

    let mut trace = ExecutionTrace::new(cfg.trace_capacity);
    let mut log = Vec::new();
    let mut memory = MemoryStore::default();
    let mut result = EpisodeResult {
        name: scenario.name.clone(),
        seed,
        success: false,
        partial_success: false,
        distractor_grasped: false,
        steps: Vec::new(),
        diagnoses: Vec::new(),
        local_repairs: 0,
        replans: 0,
        primitive_invocations: 0,
        failure_reason: None,
        wall_time: 0.0,
    };
    let mut grasped: BTreeSet<String> = BTreeSet::new();
    let mut plan_lengths = Vec::new();

    let plan = planner.decompose(&scenario.command, &plan_context(&world, &tools), &graph);
    let mut completed = false;
    if let Ok(seq) = &plan {
        let local_cap = 2 * seq.ops.len() as u32;
        plan_lengths.push(seq.ops.len());
        let mut plan_version = 0;
        let mut i = 0;
        let mut t = 0;
        let mut k = 0;
        let mut pending: Option<(DiagnosisCategory, String)> = None;
        let mut ops = seq.ops.clone();
        loop {
            if i >= ops.len() {
                completed = true;
                break;
            }
            t += 1;
            let op = ops[i].clone();
            let tags = op.tags();
            let mut injections = inject_failure(&mut inj, Phase::Before, t, &tags, &mut world);
            let exec = if inj.step_aborts() {
                injections.push("step_failure".into());
                failed(&op, ToolErrorKind::Injected, "injected step failure".into())
            } else {
                result.primitive_invocations += 1;
                execute(&mut world, &graph, &op, &mut inj, cfg)
            };
            injections.extend(inject_failure(&mut inj, Phase::After, t, &tags, &mut world));
            if let Some(g) = &exec.report.grasped {
                grasped.insert(g.clone());
            }
            let obs = observe(&world);
            graph = sync_graph(&graph, &obs);
            let report = verify(&graph, &obs, &op, exec.error.is_none(), &OracleVerifier);
            let e = report.e;
            result.steps.push(StepOutcome {
                t,
                op: op.label.clone(),
                e,
            });
            trace.push(TraceRecord {
                t,
                plan_version,
                op_index: i,
                op: op.clone(),
                tool: exec.tool,
                tool_error: exec.error,
                sim: exec.report,
                min_clearance: exec.min_clearance,
                ik: exec.ik,
                injections,
                verification: report,
                e,
                graph_timestamp: graph.timestamp,
                diagnosis: None,
                action: Action::Proceed,
            });
            if let Some((category, repair)) = pending.take() {
                memory.record(category, &repair, e == 1);
            }
            if e == 1 {
                log.push(trace.last().expect("just pushed").clone());
                i += 1;
                k = 0;
                continue;
            }
            let mut action = Action::Fail;
            let mut diagnosis = None;
            if !cfg.recovery {
                result.failure_reason = Some(format!("step {t} ({}) failed", op.label));
            } else {
                let diag = planner.diagnose(&trace, &graph);
                let local_ok = diag.category.is_local()
                    && k < cfg.max_local_retries
                    && result.local_repairs < local_cap
                    && !memory.discourages_local(diag.category);
                if local_ok {
                    if let Ok(repaired) = repair_local(&op, &diag, &graph) {
                        ops[i] = repaired;
                        k += 1;
                        result.local_repairs += 1;
                        pending = Some((diag.category, format!("adjust {}", op.label)));
                        action = Action::RepairLocal;
                    }
                }
                if action != Action::RepairLocal {
                    if result.replans >= cfg.max_replans {
                        result.failure_reason = Some(format!(
                            "step {t} ({}) failed with {:?}; recovery budget exhausted",
                            op.label, diag.category
                        ));
                    } else {
                        result.replans += 1;
                        match planner.replan(&graph, &scenario.command, &memory, &plan_context(&world, &tools)) {
                            Ok(seq) => {
                                plan_lengths.push(seq.ops.len());
                                ops = seq.ops;
                                plan_version += 1;
                                i = 0;
                                k = 0;
                                action = Action::Replan;
                            }
                            Err(err) => result.failure_reason = Some(err.to_string()),
                        }
                    }
                }
                result.diagnoses.push(diag.clone());
                diagnosis = Some(diag);
            }
            let last = trace.last_mut().expect("just pushed");
            last.diagnosis = diagnosis;
            last.action = action;
            log.push(last.clone());
            if action == Action::Fail {
                break;
            }
        }
    }
    if let Err(e) = &plan {
        result.failure_reason = Some(e.to_string());
    }

    let is_distractor = |id: &String| world.scene.body(id).is_some_and(|b| b.distractor);
    result.distractor_grasped = grasped.iter().any(is_distractor);
    result.success = completed && !result.distractor_grasped;
    result.partial_success = result.success
        || match &scenario.expect.target {
            Some(target) => grasped.contains(target),
            None => grasped.iter().any(|g| !is_distractor(g)),
        };
    result.wall_time = started.elapsed().as_secs_f64();
    Ok(EpisodeOutput {
        result,
        log,
        plan_lengths,
        graph,
        memory,
        world,
    })
}
