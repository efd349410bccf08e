//! Task planner backed by an external HTTP service.
//!
//! Each call POSTs one JSON document and expects one JSON document back:
//!
//! ```text
//! request:  {"schema": "unimanip-planner", "version": 1, "method": "decompose" | "diagnose" | "replan",
//!            "command": ..., "graph": ..., "tools": [...], "trace_tail": [...], "memory": [...]}
//! response: {"schema": "unimanip-planner", "version": 1, "operations": [...]}   (decompose, replan)
//!           {"schema": "unimanip-planner", "version": 1, "diagnosis": {...}}    (diagnose)
//! ```

use std::time::Duration;

use serde::{Deserialize, Serialize};

use unimanip_core::primitives::ToolName;
use unimanip_core::scene_graph::SceneGraph;

use super::memory::{MemoryRecord, MemoryStore};
use super::ops::{Operation, OperationSequence};
use super::planner::{diagnose_rules, Diagnosis, PlanContext, TaskPlanner};
use super::trace::{ExecutionTrace, TraceRecord};
use super::AgentError;

pub const PLANNER_SCHEMA: &str = "unimanip-planner";
pub const PLANNER_VERSION: u32 = 1;
/// Trace records sent with each request.
pub const TRACE_TAIL: usize = 5;

#[derive(Debug, Serialize)]
struct PlannerRequest<'a> {
    schema: &'static str,
    version: u32,
    method: &'static str,
    command: &'a str,
    graph: &'a SceneGraph,
    tools: &'a [ToolName],
    trace_tail: Vec<&'a TraceRecord>,
    memory: &'a [MemoryRecord],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlannerResponse {
    schema: String,
    version: u32,
    #[serde(default)]
    operations: Option<Vec<Operation>>,
    #[serde(default)]
    diagnosis: Option<Diagnosis>,
}

#[derive(Debug, Clone)]
pub struct HttpPlanner {
    url: String,
    agent: ureq::Agent,
    command: String,
    tools: Vec<ToolName>,
}

impl HttpPlanner {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.to_string(),
            agent,
            command: String::new(),
            tools: Vec::new(),
        }
    }

    fn call(&self, req: &PlannerRequest<'_>) -> Result<PlannerResponse, AgentError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(req)
            .map_err(|e| AgentError::Endpoint(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AgentError::Endpoint(e.to_string()))?;
        let out: PlannerResponse =
            serde_json::from_str(&text).map_err(|e| AgentError::Endpoint(format!("malformed response: {e}")))?;
        if out.schema != PLANNER_SCHEMA || out.version != PLANNER_VERSION {
            return Err(AgentError::Endpoint(format!(
                "unsupported response schema {} v{}",
                out.schema, out.version
            )));
        }
        Ok(out)
    }

    fn plan(
        &mut self,
        method: &'static str,
        command: &str,
        graph: &SceneGraph,
        memory: &[MemoryRecord],
        ctx: &PlanContext,
    ) -> Result<OperationSequence, AgentError> {
        self.command = command.to_string();
        self.tools.clone_from(&ctx.tools.tools);
        let out = self.call(&PlannerRequest {
            schema: PLANNER_SCHEMA,
            version: PLANNER_VERSION,
            method,
            command,
            graph,
            tools: &ctx.tools.tools,
            trace_tail: Vec::new(),
            memory,
        })?;
        let ops = out
            .operations
            .ok_or_else(|| AgentError::Endpoint("response has no operations".into()))?;
        for op in &ops {
            op.validate().map_err(AgentError::InvalidPlan)?;
            if !graph.nodes.contains_key(&op.target) {
                return Err(AgentError::InvalidPlan(format!(
                    "{}: unknown target {}",
                    op.label, op.target
                )));
            }
            let tool = match op.kind() {
                super::ops::OpKind::MoveTo => ToolName::MoveTo,
                super::ops::OpKind::Operate => ToolName::Operate,
                super::ops::OpKind::Navigate => ToolName::Navigate,
            };
            if !ctx.tools.contains(tool) {
                return Err(AgentError::InvalidPlan(format!(
                    "{}: tool {tool:?} unavailable",
                    op.label
                )));
            }
        }
        Ok(OperationSequence {
            ops,
            source_command: command.to_string(),
        })
    }
}

impl TaskPlanner for HttpPlanner {
    fn decompose(
        &mut self,
        command: &str,
        ctx: &PlanContext,
        graph: &SceneGraph,
    ) -> Result<OperationSequence, AgentError> {
        self.plan("decompose", command, graph, &[], ctx)
    }

    /// Falls back to the rule table when the service fails.
    fn diagnose(&mut self, trace: &ExecutionTrace, graph: &SceneGraph) -> Diagnosis {
        let req = PlannerRequest {
            schema: PLANNER_SCHEMA,
            version: PLANNER_VERSION,
            method: "diagnose",
            command: &self.command,
            graph,
            tools: &self.tools,
            trace_tail: trace.tail(TRACE_TAIL),
            memory: &[],
        };
        match self.call(&req).and_then(|r| {
            r.diagnosis
                .ok_or_else(|| AgentError::Endpoint("response has no diagnosis".into()))
        }) {
            Ok(d) => d,
            Err(e) => {
                let mut d = diagnose_rules(trace, graph);
                d.detail = format!("{} (endpoint unavailable: {e})", d.detail);
                d
            }
        }
    }

    fn replan(
        &mut self,
        graph: &SceneGraph,
        command: &str,
        memory: &MemoryStore,
        ctx: &PlanContext,
    ) -> Result<OperationSequence, AgentError> {
        self.plan("replan", command, graph, memory.records(), ctx)
    }
}
