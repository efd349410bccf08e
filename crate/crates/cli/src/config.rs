//! Batch run configuration: built-in defaults, then an optional TOML file,
//! then flags and environment variables.

use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args};
use serde::{Deserialize, Serialize};

use unimanip_agent::agent::EpisodeConfig;
use unimanip_agent::eval::{BatchConfig, PlannerChoice};
use unimanip_core::kinematics::IkParams;
use unimanip_core::occupancy::DEFAULT_RESOLUTION;
use unimanip_core::planner::{Connectivity, PlannerParams, DEFAULT_R_SAFE};
use unimanip_core::primitives::{DEFAULT_KP, DEFAULT_K_THETA};

use crate::CliError;

pub const PLANNER_URL_ENV: &str = "UNIMANIP_PLANNER_URL";
pub const PLANNER_TIMEOUT_ENV: &str = "UNIMANIP_PLANNER_TIMEOUT_MS";
pub const DEFAULT_PLANNER_TIMEOUT_MS: u64 = 30_000;

/// Everything a batch run needs. Field names double as config-file keys and
/// flag ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenarios: Vec<PathBuf>,
    /// Replaces every scenario's seed when set.
    pub seed: Option<u64>,
    pub recovery: bool,
    /// `rules` or the URL of a planner service.
    pub planner: String,
    pub planner_timeout_ms: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub connectivity: u8,
    pub r_safe: f64,
    pub resolution: f64,
    pub kernel_side: usize,
    pub eps_p0: f64,
    pub eps_r0: f64,
    pub seeds_per_round: u32,
    pub max_relax_rounds: u32,
    pub kp: f64,
    pub k_theta: f64,
    pub max_local_retries: u32,
    pub max_replans: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ik = IkParams::default();
        let episode = EpisodeConfig::default();
        Self {
            scenarios: Vec::new(),
            seed: None,
            recovery: true,
            planner: "rules".into(),
            planner_timeout_ms: DEFAULT_PLANNER_TIMEOUT_MS,
            out: PathBuf::from("unimanip-out"),
            jobs: 0,
            connectivity: Connectivity::default().into(),
            r_safe: DEFAULT_R_SAFE,
            resolution: DEFAULT_RESOLUTION,
            kernel_side: episode.kernel_side,
            eps_p0: ik.eps_p0,
            eps_r0: ik.eps_r0,
            seeds_per_round: ik.seeds_per_round,
            max_relax_rounds: ik.max_relax_rounds,
            kp: DEFAULT_KP,
            k_theta: DEFAULT_K_THETA,
            max_local_retries: episode.max_local_retries,
            max_replans: episode.max_replans,
        }
    }
}

/// Flags shared by every subcommand that solves IK.
#[derive(Debug, Clone, Args, Serialize)]
pub struct IkArgs {
    /// Strict position tolerance (m)
    #[arg(long, default_value_t = IkParams::default().eps_p0)]
    pub eps_p0: f64,
    /// Strict orientation tolerance (rad)
    #[arg(long, default_value_t = IkParams::default().eps_r0)]
    pub eps_r0: f64,
    /// Perturbed seeds tried per relaxation round
    #[arg(long, default_value_t = IkParams::default().seeds_per_round)]
    pub seeds_per_round: u32,
    /// Relaxation rounds after the strict one
    #[arg(long, default_value_t = IkParams::default().max_relax_rounds)]
    pub max_relax_rounds: u32,
}

impl IkArgs {
    pub fn params(&self) -> IkParams {
        IkParams {
            eps_p0: self.eps_p0,
            eps_r0: self.eps_r0,
            seeds_per_round: self.seeds_per_round,
            max_relax_rounds: self.max_relax_rounds,
            ..IkParams::default()
        }
    }
}

/// Flags shared by every subcommand that maps and plans.
#[derive(Debug, Clone, Args, Serialize)]
pub struct MapArgs {
    /// Voxel edge length (m); the workspace extent is kept
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: f64,
    /// Side of the cubic closing kernel (voxels, odd)
    #[arg(long, default_value_t = EpisodeConfig::default().kernel_side)]
    pub kernel_side: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlannerArgs {
    /// Required clearance from obstacles (m)
    #[arg(long, default_value_t = DEFAULT_R_SAFE)]
    pub r_safe: f64,
    /// Grid neighbourhood used by A*
    #[arg(long, default_value = "26", value_parser = parse_connectivity)]
    pub connectivity: u8,
}

impl PlannerArgs {
    pub fn params(&self) -> Result<PlannerParams, CliError> {
        let p = PlannerParams {
            r_safe: self.r_safe,
            connectivity: Connectivity::try_from(self.connectivity).map_err(CliError::Config)?,
        };
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }
}

fn parse_connectivity(s: &str) -> Result<u8, String> {
    let v: u8 = s.parse().map_err(|_| format!("expected 6 or 26, got {s}"))?;
    Connectivity::try_from(v)?;
    Ok(v)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    /// Scenario files or directories of them
    pub scenarios: Vec<PathBuf>,
    /// TOML file with any of the settings below; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed for every episode [default: each scenario's own]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable diagnosis and repair; the first failure ends an episode
    #[arg(long)]
    pub no_recovery: bool,
    /// Task planner: `rules` or a service URL
    #[arg(long, env = PLANNER_URL_ENV, hide_env_values = true, default_value = "rules")]
    pub planner: String,
    /// Planner service timeout (ms)
    #[arg(long, env = PLANNER_TIMEOUT_ENV, hide_env_values = true, default_value_t = DEFAULT_PLANNER_TIMEOUT_MS)]
    pub planner_timeout_ms: u64,
    /// Output directory for traces, results and metrics
    #[arg(long, default_value = "unimanip-out")]
    pub out: PathBuf,
    /// Parallel episodes; 0 uses every core
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub planner_params: PlannerArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub map: MapArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub ik: IkArgs,
    /// Docking position gain
    #[arg(long, default_value_t = DEFAULT_KP)]
    pub kp: f64,
    /// Docking heading gain
    #[arg(long, default_value_t = DEFAULT_K_THETA)]
    pub k_theta: f64,
    /// Local repairs allowed per operation
    #[arg(long, default_value_t = EpisodeConfig::default().max_local_retries)]
    pub max_local_retries: u32,
    /// Global replans allowed per episode
    #[arg(long, default_value_t = EpisodeConfig::default().max_replans)]
    pub max_replans: u32,
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(
        m.value_source(id),
        Some(ValueSource::CommandLine | ValueSource::EnvVariable)
    )
}

impl RunConfig {
    /// Layers defaults, the config file named by `--config` and the explicitly
    /// given flags.
    pub fn resolve(args: &RunArgs, matches: &ArgMatches) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => Some(read_table(path)?),
            None => None,
        };
        Self::layer(args, matches, file)
    }

    fn layer(args: &RunArgs, matches: &ArgMatches, file: Option<toml::Table>) -> Result<Self, CliError> {
        let mut merged = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let obj = merged.as_object_mut().expect("config is a map");
        for (k, v) in file.into_iter().flatten() {
            let v = serde_json::to_value(v).map_err(|e| CliError::Config(format!("{k}: {e}")))?;
            obj.insert(k, v);
        }
        let given = serde_json::to_value(args).expect("flags serialize");
        for id in matches.ids().map(|id| id.as_str()) {
            if !explicit(matches, id) {
                continue;
            }
            match id {
                "config" => {}
                "no_recovery" => {
                    obj.insert("recovery".into(), serde_json::Value::Bool(!args.no_recovery));
                }
                _ => {
                    if let Some(v) = given.get(id) {
                        obj.insert(id.into(), v.clone());
                    }
                }
            }
        }
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.scenarios.is_empty() {
            return Err(CliError::Config("no scenarios given".into()));
        }
        if self.planner != "rules" && !(self.planner.starts_with("http://") || self.planner.starts_with("https://")) {
            return Err(CliError::Config(format!(
                "planner must be `rules` or an http(s) URL, got {}",
                self.planner
            )));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(CliError::Config(format!(
                "resolution {} must be positive",
                self.resolution
            )));
        }
        if self.kernel_side.is_multiple_of(2) {
            return Err(CliError::Config(format!(
                "kernel_side {} must be odd",
                self.kernel_side
            )));
        }
        if !(self.kp > 0.0 && self.k_theta > 0.0) {
            return Err(CliError::Config("docking gains must be positive".into()));
        }
        self.ik_params()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.planner_params()?
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn ik_params(&self) -> IkParams {
        IkParams {
            eps_p0: self.eps_p0,
            eps_r0: self.eps_r0,
            seeds_per_round: self.seeds_per_round,
            max_relax_rounds: self.max_relax_rounds,
            ..IkParams::default()
        }
    }

    pub fn planner_params(&self) -> Result<PlannerParams, CliError> {
        Ok(PlannerParams {
            r_safe: self.r_safe,
            connectivity: Connectivity::try_from(self.connectivity).map_err(CliError::Config)?,
        })
    }

    pub fn batch(&self) -> Result<BatchConfig, CliError> {
        let planner = if self.planner == "rules" {
            PlannerChoice::Rules
        } else {
            PlannerChoice::Endpoint {
                url: self.planner.clone(),
                timeout_ms: self.planner_timeout_ms,
            }
        };
        Ok(BatchConfig {
            episode: EpisodeConfig {
                recovery: self.recovery,
                max_local_retries: self.max_local_retries,
                max_replans: self.max_replans,
                ik: self.ik_params(),
                planner: self.planner_params()?,
                kernel_side: self.kernel_side,
                seed: self.seed,
                docking_gains: Some([self.kp, self.k_theta]),
                ..EpisodeConfig::default()
            },
            planner,
            jobs: self.jobs,
        })
    }
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
