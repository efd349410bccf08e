//! Versioned JSON scenario files.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use unimanip_core::kinematics::{rotation_from_axes, ChainSpec, KinematicChain, Pose7};
use unimanip_core::occupancy::{GridSpec, Intrinsics};
use unimanip_core::primitives::{PlanarPose, RobotConfig};

use super::injection::FailureInjection;
use super::scene::SimScene;
use super::world::{SimRobot, SimWorld};

pub const SCENARIO_SCHEMA: &str = "unimanip-scenario";
pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "fixed")]
    pub robot: RobotConfig,
    #[serde(default)]
    pub seed: u64,
}

fn fixed() -> RobotConfig {
    RobotConfig::Fixed
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            robot: RobotConfig::Fixed,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// Inline chain description; the built-in arm when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSpec>,
    /// Initial joints; the chain's home configuration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    /// Planar base pose `[x, y, theta]` in the world.
    #[serde(default)]
    pub base: [f64; 3],
}

/// Pinhole camera rigidly mounted on the robot base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            position: Vector3::new(-0.15, 0.0, 0.75),
            look_at: Vector3::new(0.45, 0.0, 0.0),
            width: 160,
            height: 120,
            fx: 120.0,
            fy: 120.0,
        }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        }
    }

    /// Camera pose in the base frame (+z along the view direction, +y down in
    /// the image).
    pub fn pose(&self) -> Result<Pose7, ScenarioError> {
        let z = self.look_at - self.position;
        let x = z.cross(&Vector3::z());
        if z.norm() < 1e-9 || x.norm() < 1e-9 {
            return Err(ScenarioError::Invalid(
                "camera must not look straight up or down".into(),
            ));
        }
        let z = z.normalize();
        let x = x.normalize();
        let y = z.cross(&x);
        Ok(Pose7::new(
            self.position,
            nalgebra::UnitQuaternion::from_rotation_matrix(&rotation_from_axes(x, y, z)),
        ))
    }
}

/// Mapping volume in the base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub origin: Vector3<f64>,
    pub dims: [usize; 3],
    pub resolution: f64,
}

impl Default for WorkspaceSpec {
    fn default() -> Self {
        Self {
            origin: Vector3::new(0.1, -0.35, 0.0),
            dims: [75, 70, 45],
            resolution: unimanip_core::occupancy::DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    /// Body that counts as the correct object for partial success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub version: u32,
    pub name: String,
    pub command: String,
    #[serde(default)]
    pub config: ScenarioConfig,
    #[serde(default)]
    pub robot: RobotSpec,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub workspace: WorkspaceSpec,
    pub scene: SimScene,
    #[serde(default)]
    pub injection: FailureInjection,
    #[serde(default)]
    pub expect: Expectation,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            location: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCENARIO_SCHEMA || self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Invalid(format!(
                "unsupported schema {} v{} (expected {SCENARIO_SCHEMA} v{SCENARIO_VERSION})",
                self.schema, self.version
            )));
        }
        self.scene.validate().map_err(ScenarioError::Invalid)?;
        self.workspace_spec()?;
        self.camera
            .intrinsics()
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.camera.pose()?;
        self.injection.validate(&self.scene).map_err(ScenarioError::Invalid)?;
        if let Some(t) = &self.expect.target {
            if self.scene.body(t).is_none() {
                return Err(ScenarioError::Invalid(format!("expected target {t} is not a body")));
            }
        }
        Ok(())
    }

    pub fn workspace_spec(&self) -> Result<GridSpec, ScenarioError> {
        GridSpec::new(self.workspace.origin, self.workspace.resolution, self.workspace.dims)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn chain(&self) -> Result<KinematicChain, ScenarioError> {
        match &self.robot.chain {
            Some(spec) => KinematicChain::from_spec(spec).map_err(|e| ScenarioError::Invalid(e.to_string())),
            None => Ok(KinematicChain::builtin_a1()),
        }
    }

    pub fn build_world(&self) -> Result<SimWorld, ScenarioError> {
        let chain = self.chain()?;
        let q0 = match (&self.robot.q0, &chain.home) {
            (Some(q), _) => q.clone(),
            (None, Some(h)) => h.clone(),
            (None, None) => vec![0.0; chain.dof()],
        };
        let [x, y, theta] = self.robot.base;
        let robot = SimRobot::new(chain, q0, PlanarPose { x, y, theta })
            .map_err(|e| ScenarioError::Invalid(format!("robot: {e}")))?;
        Ok(SimWorld {
            scene: self.scene.clone(),
            robot,
            camera: self.camera.clone(),
            grid: self.workspace_spec()?,
            mobile: self.config.robot == RobotConfig::Mobile,
        })
    }

    pub fn base_xy(&self) -> Vector2<f64> {
        Vector2::new(self.robot.base[0], self.robot.base[1])
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Scenario::from_json_str(&text)
}
