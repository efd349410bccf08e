//! Plan / execute / verify / reflect loop over the simulated robot.

pub mod endpoint;
pub mod episode;
pub mod memory;
pub mod ops;
pub mod planner;
pub mod trace;
pub mod verify;

pub use endpoint::{HttpPlanner, PLANNER_SCHEMA, PLANNER_VERSION};
pub use episode::{run_episode, EpisodeConfig, EpisodeOutput};
pub use memory::{retrieve_memory, MemoryRecord, MemoryStore};
pub use ops::{Condition, OpKind, OpPayload, Operation, OperationSequence};
pub use planner::{
    diagnose_rules, repair_local, Diagnosis, DiagnosisCategory, PlanContext, RuleBasedPlanner, TaskPlanner,
};
pub use trace::{Action, ExecutionTrace, IkReport, ToolErrorKind, TraceRecord};
pub use verify::{sync_graph, verify, OracleVerifier, SemanticVerifier, VerificationReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("no object matches \"{0}\"")]
    GroundingFailure(String),
    #[error("{0:?} cannot be repaired locally")]
    NotLocallyRepairable(DiagnosisCategory),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("planner endpoint: {0}")]
    Endpoint(String),
    #[error("scenario: {0}")]
    Scenario(String),
}
