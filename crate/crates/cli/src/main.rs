//! `unimanip`: batch evaluation and inspection of the manipulation pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use config::{IkArgs, MapArgs, PlannerArgs, RunArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config file or input files.
    #[error("{0}")]
    Config(String),
    /// The request was well formed but could not be satisfied.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "unimanip",
    version,
    about = "Task-to-motion manipulation pipeline in a kinematic simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run scenarios and write traces, results and aggregate metrics
    Run(RunArgs),
    /// Dump the occupancy stages and distance field seen from a scenario's camera
    Map {
        /// Scenario file
        scenario: PathBuf,
        /// JSON camera description replacing the scenario's
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Bodies left out of the depth image
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[command(flatten)]
        map: MapArgs,
        /// Output directory
        #[arg(long, default_value = "unimanip-map")]
        out: PathBuf,
    },
    /// Solve relaxed inverse kinematics for one target pose
    Ik {
        /// JSON chain description [default: built-in arm]
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Target pose x,y,z,qw,qx,qy,qz in the chain base frame
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true,
            value_name = "X,Y,Z,QW,QX,QY,QZ"
        )]
        target: Vec<f64>,
        /// Initial joint values [default: the chain's home configuration]
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "Q1,Q2,...")]
        q_seed: Option<Vec<f64>>,
        #[command(flatten)]
        ik: IkArgs,
    },
    /// Plan a collision-free tool path in a scenario and print its waypoints
    Plan {
        /// Scenario file
        scenario: PathBuf,
        /// Start pose x,y,z,qw,qx,qy,qz in the robot base frame [default: current tool pose]
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            value_name = "X,Y,Z,QW,QX,QY,QZ"
        )]
        start: Option<Vec<f64>>,
        /// Goal pose x,y,z,qw,qx,qy,qz in the robot base frame
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true,
            value_name = "X,Y,Z,QW,QX,QY,QZ"
        )]
        goal: Vec<f64>,
        /// Bodies left out of the depth image
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[command(flatten)]
        planner: PlannerArgs,
        #[command(flatten)]
        map: MapArgs,
        /// Waypoint file (JSON lines) [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch() -> Result<(), CliError> {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).map_err(|e| e.exit())?;
    match cli.command {
        Command::Run(args) => {
            let (_, sub) = matches.subcommand().expect("subcommand present");
            let cfg = config::RunConfig::resolve(&args, sub)?;
            commands::run(&cfg)
        }
        Command::Map {
            scenario,
            camera,
            exclude,
            map,
            out,
        } => commands::map(&scenario, camera.as_deref(), &exclude, &map, &out),
        Command::Ik {
            chain,
            target,
            q_seed,
            ik,
        } => commands::ik(chain.as_deref(), &target, q_seed.as_deref(), &ik),
        Command::Plan {
            scenario,
            start,
            goal,
            exclude,
            planner,
            map,
            out,
        } => commands::plan(
            &scenario,
            start.as_deref(),
            &goal,
            &exclude,
            &planner,
            &map,
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
