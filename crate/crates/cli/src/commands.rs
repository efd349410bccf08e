use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use unimanip_agent::eval::{format_table, run_batch, write_outputs};
use unimanip_agent::sim::{load_scenario, CameraSpec, Scenario, SimWorld};
use unimanip_core::kinematics::{relaxed_ik, KinematicChain, KinematicsError, Pose7};
use unimanip_core::occupancy::{build_occupancy, write_grid, Kernel, OccupancyStages, VoxelGrid};
use unimanip_core::planner::{compute_esdf, plan_with_esdf, write_esdf, Esdf};

use crate::config::{IkArgs, MapArgs, PlannerArgs, RunConfig};
use crate::CliError;

fn config_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

/// Files named directly, plus every `*.json` inside named directories.
pub fn expand_scenarios(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| config_err(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(config_err(p, "no such scenario file or directory"));
        }
    }
    Ok(out)
}

/// Changes the voxel size while keeping the mapped extent.
fn set_resolution(s: &mut Scenario, r: f64) {
    let old = s.workspace.resolution;
    if (old - r).abs() <= 1e-12 {
        return;
    }
    for d in s.workspace.dims.iter_mut() {
        *d = ((*d as f64 * old / r) - 1e-9).ceil().max(1.0) as usize;
    }
    s.workspace.resolution = r;
}

fn load(path: &Path, resolution: f64) -> Result<Scenario, CliError> {
    let mut s = load_scenario(path).map_err(|e| config_err(path, e))?;
    set_resolution(&mut s, resolution);
    s.validate().map_err(|e| config_err(path, e))?;
    Ok(s)
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let scenarios = expand_scenarios(&cfg.scenarios)?
        .iter()
        .map(|p| load(p, cfg.resolution))
        .collect::<Result<Vec<_>, _>>()?;
    if scenarios.is_empty() {
        return Err(CliError::Config("no scenario files found".into()));
    }
    let outputs = run_batch(&scenarios, &cfg.batch()?).map_err(|e| CliError::Failed(e.to_string()))?;
    let report = write_outputs(&cfg.out, &outputs).map_err(|e| CliError::Failed(e.to_string()))?;
    let path = cfg.out.join("run_config.json");
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    print!("{}", format_table(&report));
    Ok(())
}

fn world_for(scenario: &Path, map: &MapArgs, camera: Option<&Path>) -> Result<SimWorld, CliError> {
    let mut s = load(scenario, map.resolution)?;
    if let Some(path) = camera {
        let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
        s.camera = serde_json::from_str::<CameraSpec>(&text).map_err(|e| config_err(path, e))?;
        s.validate().map_err(|e| config_err(path, e))?;
    }
    s.build_world().map_err(|e| config_err(scenario, e))
}

fn stages(world: &SimWorld, exclude: &[String], map: &MapArgs) -> Result<OccupancyStages, CliError> {
    let mut hidden = Vec::new();
    for id in exclude {
        let group = world.scene.group_of(id);
        if group.is_empty() {
            return Err(CliError::Config(format!("unknown body {id}")));
        }
        hidden.extend(group);
    }
    let kernel = Kernel::cube(map.kernel_side).map_err(|e| CliError::Config(e.to_string()))?;
    world
        .render(&hidden)
        .and_then(|img| build_occupancy(&img, world.grid, kernel))
        .map_err(|e| CliError::Failed(e.to_string()))
}

fn dump_grid(dir: &Path, name: &str, g: &VoxelGrid) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
    write_grid(g, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&path, e))
}

fn dump_esdf(dir: &Path, phi: &Esdf) -> Result<(), CliError> {
    let path = dir.join("phi.esdf");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
    write_esdf(phi, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&path, e))
}

pub fn map(
    scenario: &Path,
    camera: Option<&Path>,
    exclude: &[String],
    map: &MapArgs,
    out: &Path,
) -> Result<(), CliError> {
    let world = world_for(scenario, map, camera)?;
    let st = stages(&world, exclude, map)?;
    let phi = compute_esdf(&st.completed);
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    dump_grid(out, "m_init.grid", &st.init)?;
    dump_grid(out, "m_closed.grid", &st.closed)?;
    dump_grid(out, "m_final.grid", &st.completed)?;
    dump_esdf(out, &phi)?;
    let min = phi.values().iter().copied().fold(f64::INFINITY, f64::min);
    let summary = json!({
        "origin": <[f64; 3]>::from(world.grid.origin),
        "resolution": world.grid.resolution,
        "dims": world.grid.dims,
        "points": st.cloud.points.len(),
        "dropped": st.dropped,
        "occupied": {
            "init": st.init.count_occupied(),
            "closed": st.closed.count_occupied(),
            "final": st.completed.count_occupied(),
        },
        "esdf": { "min": min, "cap": phi.cap() },
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let path = out.join("summary.json");
    fs::write(&path, format!("{text}\n")).map_err(|e| io_err(&path, e))?;
    println!("{text}");
    Ok(())
}

fn pose(values: &[f64], what: &str) -> Result<Pose7, CliError> {
    let arr: [f64; 7] = values
        .try_into()
        .map_err(|_| CliError::Config(format!("{what} needs 7 values, got {}", values.len())))?;
    Pose7::try_from(arr).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

pub fn ik(chain: Option<&Path>, target: &[f64], q_seed: Option<&[f64]>, args: &IkArgs) -> Result<(), CliError> {
    let chain = match chain {
        Some(p) => KinematicChain::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => KinematicChain::builtin_a1(),
    };
    let target = pose(target, "target")?;
    let seed = match (q_seed, &chain.home) {
        (Some(q), _) => q.to_vec(),
        (None, Some(h)) => h.clone(),
        (None, None) => vec![0.0; chain.dof()],
    };
    match relaxed_ik(&chain, &target, &seed, &args.params()) {
        Ok(sol) => {
            let report = json!({
                "feasible": true,
                "q": sol.q,
                "position_error": sol.position_error,
                "orientation_error": sol.orientation_error,
                "relax_rounds_used": sol.relax_rounds_used,
            });
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Err(KinematicsError::IkInfeasible {
            position_error,
            orientation_error,
            rounds,
        }) => {
            let report = json!({
                "feasible": false,
                "position_error": position_error,
                "orientation_error": orientation_error,
                "relax_rounds_used": rounds,
            });
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Err(CliError::Failed("no IK solution within the relaxation schedule".into()))
        }
        Err(e) => Err(CliError::Config(e.to_string())),
    }
}

pub fn plan(
    scenario: &Path,
    start: Option<&[f64]>,
    goal: &[f64],
    exclude: &[String],
    planner: &PlannerArgs,
    map: &MapArgs,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let params = planner.params()?;
    let world = world_for(scenario, map, None)?;
    let start = match start {
        Some(v) => pose(v, "start")?,
        None => world.robot.eef,
    };
    let goal = pose(goal, "goal")?;
    let st = stages(&world, exclude, map)?;
    let phi = compute_esdf(&st.completed);
    let plan = plan_with_esdf(&start, &goal, &phi, &params).map_err(|e| CliError::Failed(e.to_string()))?;
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
            plan.waypoints
                .write_jsonl(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| io_err(path, e))
        }
        None => {
            let stdout = std::io::stdout();
            plan.waypoints
                .write_jsonl(&mut stdout.lock())
                .map_err(|e| CliError::Failed(e.to_string()))
        }
    }
}
