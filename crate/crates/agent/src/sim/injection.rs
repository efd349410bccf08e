//! Scripted, seeded failure injection.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::KinematicChain;
use unimanip_core::occupancy::DepthImage;

use super::perception::CoarseCorruption;
use super::scene::SimScene;
use super::world::{release_held, SimWorld};

/// Operation kinds a trigger can match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpTag {
    MoveTo,
    Grasp,
    Release,
    Operate,
    Navigate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effect {
    /// The held body drops out of the gripper right after the step.
    Slip,
    /// Moves a body (and its group) before the step runs.
    Displace { body: String, delta: Vector3<f64> },
    /// The next coarse perception reports the body shifted by `offset`.
    Mislocalize { body: String, offset: Vector3<f64> },
    /// Zero-mean Gaussian noise on every later depth render.
    DepthNoise { sigma: f64 },
    /// Clamps one joint's range for the next `attempts` IK-solved segments.
    IkBlock {
        joint: usize,
        range: [f64; 2],
        #[serde(default = "one")]
        attempts: u32,
    },
    /// The next coarse perception swaps the identities of two bodies.
    Misground { target: String, distractor: String },
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    /// 1-based executed-step index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<OpTag>,
    /// Fire once before perception, ahead of any step.
    #[serde(default)]
    pub at_start: bool,
    /// How many matching steps fire the effect.
    #[serde(default = "one")]
    pub times: u32,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FailureInjection {
    /// Overrides the episode seed for the injection stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triggers: Vec<Trigger>,
    /// Probability that any step aborts before execution.
    #[serde(default)]
    pub step_failure_prob: f64,
}

impl FailureInjection {
    pub fn validate(&self, scene: &SimScene) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.step_failure_prob) {
            return Err(format!("step_failure_prob {} outside [0, 1]", self.step_failure_prob));
        }
        let known = |id: &str| {
            scene
                .body(id)
                .map(|_| ())
                .ok_or_else(|| format!("injection names unknown body {id}"))
        };
        for t in &self.triggers {
            if t.step.is_none() && t.op.is_none() && !t.at_start {
                return Err("trigger needs a step, an op or at_start".into());
            }
            if t.at_start && matches!(t.effect, Effect::Slip) {
                return Err("slip cannot fire at start".into());
            }
            match &t.effect {
                Effect::Displace { body, .. } | Effect::Mislocalize { body, .. } => known(body)?,
                Effect::Misground { target, distractor } => {
                    known(target)?;
                    known(distractor)?;
                }
                Effect::DepthNoise { sigma } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                    return Err(format!("depth noise sigma {sigma}"));
                }
                Effect::IkBlock { range, .. } if !(range[0] <= range[1]) => {
                    return Err(format!("ik_block range {range:?}"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// When effects are applied relative to a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Start,
    Before,
    After,
}

/// Runtime state of a [`FailureInjection`] over one episode.
#[derive(Debug, Clone)]
pub struct Injector {
    spec: FailureInjection,
    fired: Vec<u32>,
    rng: ChaCha8Rng,
    depth_sigma: f64,
    coarse: CoarseCorruption,
    ik_block: Option<(usize, [f64; 2], u32)>,
}

impl Injector {
    pub fn new(spec: &FailureInjection, episode_seed: u64) -> Self {
        Self {
            fired: vec![0; spec.triggers.len()],
            rng: ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(episode_seed)),
            spec: spec.clone(),
            depth_sigma: 0.0,
            coarse: CoarseCorruption::default(),
            ik_block: None,
        }
    }

    /// Draws whether the coming step aborts. One draw per step keeps the
    /// stream aligned across runs regardless of the outcome.
    pub fn step_aborts(&mut self) -> bool {
        let p = self.spec.step_failure_prob;
        p > 0.0 && self.rng.random::<f64>() < p
    }

    pub fn take_coarse(&mut self) -> CoarseCorruption {
        std::mem::take(&mut self.coarse)
    }

    /// The chain to solve the next segment with; consumes one blocked attempt.
    pub fn chain_for_segment(&mut self, chain: &KinematicChain) -> Option<KinematicChain> {
        let (joint, range, left) = self.ik_block.as_mut()?;
        let out = chain.with_clamped_joint(*joint, range[0], range[1]).ok();
        *left -= 1;
        if *left == 0 {
            self.ik_block = None;
        }
        out
    }

    pub fn corrupt_depth(&mut self, img: &mut DepthImage) {
        if self.depth_sigma <= 0.0 {
            return;
        }
        let normal = Normal::new(0.0, self.depth_sigma).expect("finite sigma");
        for d in img.depth.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d + normal.sample(&mut self.rng)).max(0.0);
        }
    }

    fn matches(t: &Trigger, phase: Phase, step: u32, tags: &[OpTag]) -> bool {
        let slip = matches!(t.effect, Effect::Slip);
        match phase {
            Phase::Start => t.at_start,
            Phase::Before | Phase::After if t.at_start || slip != (phase == Phase::After) => false,
            _ => t.step.is_none_or(|s| s == step) && t.op.is_none_or(|o| tags.contains(&o)),
        }
    }

    fn apply(&mut self, effect: &Effect, world: &mut SimWorld) -> Option<String> {
        match effect {
            Effect::Slip => {
                let id = release_held(&mut world.robot, &mut world.scene)?;
                Some(format!("slip: dropped {id}"))
            }
            Effect::Displace { body, delta } => {
                if world
                    .robot
                    .held_id()
                    .is_some_and(|h| world.scene.group_of(h).contains(body))
                {
                    return None;
                }
                for id in world.scene.group_of(body) {
                    if let Some(b) = world.scene.body_mut(&id) {
                        b.pose.position += delta;
                    }
                }
                Some(format!("displace: {body} by {:?}", delta.as_slice()))
            }
            Effect::Mislocalize { body, offset } => {
                self.coarse.offsets.push((body.clone(), *offset));
                Some(format!("mislocalize: {body} by {:?}", offset.as_slice()))
            }
            Effect::DepthNoise { sigma } => {
                self.depth_sigma = *sigma;
                Some(format!("depth_noise: sigma {sigma}"))
            }
            Effect::IkBlock { joint, range, attempts } => {
                self.ik_block = Some((*joint, *range, (*attempts).max(1)));
                Some(format!("ik_block: joint {joint} clamped to {range:?}"))
            }
            Effect::Misground { target, distractor } => {
                self.coarse.swaps.push((target.clone(), distractor.clone()));
                Some(format!("misground: {target} <-> {distractor}"))
            }
        }
    }
}

/// Applies every trigger matching `phase` at `step`; returns a description of
/// each effect that fired.
pub fn inject_failure(
    inj: &mut Injector,
    phase: Phase,
    step: u32,
    tags: &[OpTag],
    world: &mut SimWorld,
) -> Vec<String> {
    let mut events = Vec::new();
    for i in 0..inj.spec.triggers.len() {
        let t = &inj.spec.triggers[i];
        if inj.fired[i] >= t.times || !Injector::matches(t, phase, step, tags) {
            continue;
        }
        let effect = t.effect.clone();
        if let Some(e) = inj.apply(&effect, world) {
            inj.fired[i] += 1;
            events.push(e);
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::Scenario;

    fn world() -> SimWorld {
        let text = r#"{
            "schema": "unimanip-scenario", "version": 1, "name": "t", "command": "x",
            "scene": {"bodies": [
                {"id": "cube", "label": "cube", "shape": {"box": {"size": [0.04, 0.04, 0.04]}},
                 "pose": [0.35, 0.0, 0.3, 1, 0, 0, 0], "graspable": true}
            ]}
        }"#;
        Scenario::from_json_str(text).unwrap().build_world().unwrap()
    }

    fn grasp(w: &mut SimWorld) {
        use crate::sim::world::{step_sim, StepOptions};
        use unimanip_core::planner::Waypoints;
        use unimanip_core::primitives::{GripperAction, TrajectorySegment};
        let seg = TrajectorySegment {
            waypoints: Waypoints {
                poses: vec![w.robot.eef],
            },
            gripper_action: GripperAction::Grasp,
        };
        let opts = StepOptions {
            operate: false,
            aperture: 0.05,
            ignore: &[],
        };
        step_sim(&mut w.robot, &mut w.scene, &seg, None, opts).unwrap();
        assert!(w.robot.gripper.held.is_some());
    }

    #[test]
    fn no_triggers_is_identity() {
        let mut w = world();
        let before = w.scene.clone();
        let mut inj = Injector::new(&FailureInjection::default(), 3);
        for phase in [Phase::Start, Phase::Before, Phase::After] {
            assert!(inject_failure(&mut inj, phase, 1, &[OpTag::MoveTo, OpTag::Grasp], &mut w).is_empty());
        }
        assert_eq!(w.scene, before);
        assert!(!inj.step_aborts());
    }

    #[test]
    fn slip_after_grasp_empties_gripper() {
        let spec = FailureInjection {
            triggers: vec![Trigger {
                step: Some(1),
                op: None,
                at_start: false,
                times: 1,
                effect: Effect::Slip,
            }],
            ..Default::default()
        };
        let mut w = world();
        let mut inj = Injector::new(&spec, 0);
        assert!(inject_failure(&mut inj, Phase::Before, 1, &[OpTag::Grasp], &mut w).is_empty());
        grasp(&mut w);
        let ev = inject_failure(&mut inj, Phase::After, 1, &[OpTag::Grasp], &mut w);
        assert_eq!(ev.len(), 1);
        assert!(w.robot.gripper.held.is_none());
        assert!((w.scene.body("cube").unwrap().bottom_z()).abs() < 1e-12);
    }

    #[test]
    fn op_triggers_fire_limited_times() {
        let spec = FailureInjection {
            triggers: vec![Trigger {
                step: None,
                op: Some(OpTag::MoveTo),
                at_start: false,
                times: 2,
                effect: Effect::Displace {
                    body: "cube".into(),
                    delta: Vector3::new(0.01, 0.0, 0.0),
                },
            }],
            ..Default::default()
        };
        let mut w = world();
        let mut inj = Injector::new(&spec, 0);
        let mut fired = 0;
        for step in 1..=5 {
            fired += inject_failure(&mut inj, Phase::Before, step, &[OpTag::MoveTo], &mut w).len();
            assert!(inject_failure(&mut inj, Phase::After, step, &[OpTag::MoveTo], &mut w).is_empty());
        }
        assert_eq!(fired, 2);
        assert!((w.scene.body("cube").unwrap().pose.position.x - 0.37).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_stream() {
        let spec = FailureInjection {
            step_failure_prob: 0.3,
            triggers: vec![Trigger {
                step: None,
                op: None,
                at_start: true,
                times: 1,
                effect: Effect::DepthNoise { sigma: 0.01 },
            }],
            ..Default::default()
        };
        let run = |seed| {
            let mut w = world();
            let mut inj = Injector::new(&spec, seed);
            inject_failure(&mut inj, Phase::Start, 0, &[], &mut w);
            let aborts: Vec<bool> = (0..50).map(|_| inj.step_aborts()).collect();
            let mut img = w.render(&[]).unwrap();
            inj.corrupt_depth(&mut img);
            (aborts, img.depth)
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn ik_block_is_transient() {
        let spec = FailureInjection {
            triggers: vec![Trigger {
                step: Some(2),
                op: None,
                at_start: false,
                times: 1,
                effect: Effect::IkBlock {
                    joint: 1,
                    range: [0.5, 0.6],
                    attempts: 1,
                },
            }],
            ..Default::default()
        };
        let mut w = world();
        let mut inj = Injector::new(&spec, 0);
        inject_failure(&mut inj, Phase::Before, 1, &[OpTag::MoveTo], &mut w);
        assert!(inj.chain_for_segment(&w.robot.chain).is_none());
        inject_failure(&mut inj, Phase::Before, 2, &[OpTag::MoveTo], &mut w);
        let clamped = inj.chain_for_segment(&w.robot.chain).unwrap();
        assert_eq!(clamped.lower_limits()[1], 0.5);
        assert!(inj.chain_for_segment(&w.robot.chain).is_none());
    }
}
