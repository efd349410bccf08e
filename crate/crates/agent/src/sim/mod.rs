//! Deterministic kinematic simulation used to exercise the agent.

pub mod injection;
pub mod metrics;
pub mod perception;
pub mod scenario;
pub mod scene;
pub mod world;

pub use injection::{inject_failure, Effect, FailureInjection, Injector, OpTag, Phase, Trigger};
pub use metrics::{compute_metrics, success_product, EpisodeResult, Metrics, MetricsError};
pub use perception::{observe, perceive, CoarseCorruption, Observation};
pub use scenario::{load_scenario, CameraSpec, Scenario, ScenarioError};
pub use scene::{render_depth, Body, PartKind, PartSpec, SimScene};
pub use world::{step_sim, Held, SimRobot, SimWorld, StepOptions, StepReport};
