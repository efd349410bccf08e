//! Bounded short-term execution trace.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use unimanip_core::primitives::ToolRecord;

use crate::sim::StepReport;

use super::ops::Operation;
use super::planner::Diagnosis;
use super::verify::VerificationReport;

pub const DEFAULT_TRACE_CAPACITY: usize = 20;

/// What the executor did after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Proceed,
    RepairLocal,
    Replan,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    /// IK found no solution for some waypoint.
    Kinematic,
    /// The clearance planner found no path or an endpoint was blocked.
    Planning,
    Perception,
    InvalidRequest,
    /// Aborted by injected step failure.
    Injected,
}

/// Worst-case IK figures over a solved segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkReport {
    pub relax_rounds: u32,
    pub position_error: f64,
    pub orientation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u32,
    pub plan_version: u32,
    pub op_index: usize,
    pub op: Operation,
    pub tool: ToolRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_error: Option<ToolErrorKind>,
    pub sim: StepReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ik: Option<IkReport>,
    /// Smallest distance field value along a planned transit (m).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_clearance: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub injections: Vec<String>,
    pub verification: VerificationReport,
    pub e: u8,
    pub graph_timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<Diagnosis>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    capacity: usize,
    records: VecDeque<TraceRecord>,
}

impl Default for ExecutionTrace {
    fn default() -> Self {
        Self::new(DEFAULT_TRACE_CAPACITY)
    }
}

impl ExecutionTrace {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            records: VecDeque::new(),
        }
    }

    pub fn push(&mut self, r: TraceRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(r);
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.back()
    }

    pub fn last_mut(&mut self) -> Option<&mut TraceRecord> {
        self.records.back_mut()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter()
    }

    /// The most recent `n` records, oldest first.
    pub fn tail(&self, n: usize) -> Vec<&TraceRecord> {
        let skip = self.records.len().saturating_sub(n);
        self.records.iter().skip(skip).collect()
    }
}
