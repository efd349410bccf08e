//! Episode results and batch metrics (SR, PSR, Dist.).

use serde::{Deserialize, Serialize};

use crate::agent::Diagnosis;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub t: u32,
    pub op: String,
    pub e: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub name: String,
    pub seed: u64,
    pub success: bool,
    /// The correct object was grasped (implied by success).
    pub partial_success: bool,
    pub distractor_grasped: bool,
    pub steps: Vec<StepOutcome>,
    pub diagnoses: Vec<Diagnosis>,
    pub local_repairs: u32,
    pub replans: u32,
    pub primitive_invocations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    /// Seconds; kept out of serialized output so result files are reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    /// Percent of successful episodes.
    pub sr: f64,
    /// Percent of episodes that grasped the correct object.
    pub psr: f64,
    /// Percent of episodes that grasped a distractor.
    pub dist: f64,
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<Metrics, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::InvalidArgument("no episodes".into()));
    }
    let n = results.len();
    let pct = |f: fn(&EpisodeResult) -> bool| 100.0 * results.iter().filter(|r| f(r)).count() as f64 / n as f64;
    Ok(Metrics {
        episodes: n,
        sr: pct(|r| r.success),
        psr: pct(|r| r.partial_success),
        dist: pct(|r| r.distractor_grasped),
    })
}

/// Episode success probability of a chain of independent steps.
pub fn success_product(step_probs: &[f64]) -> Result<f64, MetricsError> {
    if let Some(p) = step_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MetricsError::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    Ok(step_probs.iter().product())
}
