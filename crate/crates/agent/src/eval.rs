//! Batch evaluation: parallel episodes, per-episode trace/result files and
//! aggregate metrics.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, AgentError, EpisodeConfig, EpisodeOutput, HttpPlanner, RuleBasedPlanner, TaskPlanner};
use crate::sim::{compute_metrics, EpisodeResult, Metrics, MetricsError, Scenario};

pub const METRICS_SCHEMA: &str = "unimanip-metrics";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("episode {name}: {source}")]
    Episode { name: String, source: AgentError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerChoice {
    #[default]
    Rules,
    Endpoint {
        url: String,
        timeout_ms: u64,
    },
}

impl PlannerChoice {
    pub fn build(&self) -> Box<dyn TaskPlanner> {
        match self {
            PlannerChoice::Rules => Box::new(RuleBasedPlanner),
            PlannerChoice::Endpoint { url, timeout_ms } => {
                Box::new(HttpPlanner::new(url, Duration::from_millis(*timeout_ms)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchConfig {
    pub episode: EpisodeConfig,
    pub planner: PlannerChoice,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

/// Aggregate metrics file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub local_repairs: u32,
    pub replans: u32,
    pub results: Vec<EpisodeResult>,
}

/// Runs every scenario; outputs come back in input order.
pub fn run_batch(scenarios: &[Scenario], cfg: &BatchConfig) -> Result<Vec<EpisodeOutput>, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let outputs: Vec<Result<EpisodeOutput, EvalError>> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| {
                let mut planner = cfg.planner.build();
                run_episode(s, planner.as_mut(), &cfg.episode).map_err(|source| EvalError::Episode {
                    name: s.name.clone(),
                    source,
                })
            })
            .collect()
    });
    outputs.into_iter().collect()
}

pub fn metrics_report(outputs: &[EpisodeOutput]) -> Result<MetricsReport, EvalError> {
    let results: Vec<EpisodeResult> = outputs.iter().map(|o| o.result.clone()).collect();
    Ok(MetricsReport {
        schema: METRICS_SCHEMA.into(),
        metrics: compute_metrics(&results)?,
        local_repairs: results.iter().map(|r| r.local_repairs).sum(),
        replans: results.iter().map(|r| r.replans).sum(),
        results,
    })
}

/// File stems, made unique with an index suffix where names repeat.
pub fn output_stems(outputs: &[EpisodeOutput]) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for o in outputs {
        *counts.entry(&o.result.name).or_default() += 1;
    }
    outputs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if counts[o.result.name.as_str()] > 1 {
                format!("{}_{i}", o.result.name)
            } else {
                o.result.name.clone()
            }
        })
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes `<stem>.trace.jsonl`, `<stem>.result.json` per episode and
/// `metrics.json`; returns the report.
pub fn write_outputs(dir: &Path, outputs: &[EpisodeOutput]) -> Result<MetricsReport, EvalError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (o, stem) in outputs.iter().zip(output_stems(outputs)) {
        let path = dir.join(format!("{stem}.trace.jsonl"));
        let mut buf = Vec::new();
        for r in &o.log {
            serde_json::to_writer(&mut buf, r).map_err(|e| io_err(&path, e))?;
            buf.write_all(b"\n").map_err(|e| io_err(&path, e))?;
        }
        write_file(&path, &buf)?;
        let path = dir.join(format!("{stem}.result.json"));
        let text = serde_json::to_string_pretty(&o.result).map_err(|e| io_err(&path, e))?;
        write_file(&path, text.as_bytes())?;
    }
    let report = metrics_report(outputs)?;
    let path = dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| io_err(&path, e))?;
    write_file(&path, text.as_bytes())?;
    Ok(report)
}

/// Plain-text metrics table.
pub fn format_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<32} {:>7} {:>7} {:>7} {:>6} {:>7}\n",
        "episode", "success", "partial", "distr.", "local", "replans"
    ));
    let yn = |b: bool| if b { "yes" } else { "no" };
    for r in &report.results {
        out.push_str(&format!(
            "{:<32} {:>7} {:>7} {:>7} {:>6} {:>7}\n",
            r.name,
            yn(r.success),
            yn(r.partial_success),
            yn(r.distractor_grasped),
            r.local_repairs,
            r.replans
        ));
    }
    out.push_str(&format!(
        "episodes {}  SR {:.1}%  PSR {:.1}%  Dist. {:.1}%\n",
        report.metrics.episodes, report.metrics.sr, report.metrics.psr, report.metrics.dist
    ));
    out
}
