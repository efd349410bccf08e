use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use unimanip_core::kinematics::KinematicChain;
use unimanip_core::occupancy::read_grid;
use unimanip_core::planner::{read_esdf, Waypoints};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn golden(name: &str) -> PathBuf {
    root().join("scenarios/golden").join(format!("{name}.json"))
}

fn unimanip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unimanip"))
        .args(args)
        .env_remove("UNIMANIP_PLANNER_URL")
        .env_remove("UNIMANIP_PLANNER_TIMEOUT_MS")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn csv(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[test]
fn run_help_matches_golden_text() {
    let out = unimanip(&["run", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let expected =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/run_help.txt")).unwrap();
    assert_eq!(text, expected);
    for (flag, default) in [
        ("--resolution", "0.01"),
        ("--r-safe", "0.051"),
        ("--eps-p0", "0.01"),
        ("--eps-r0", "0.02"),
        ("--kp", "0.6"),
        ("--k-theta", "0.2"),
        ("--connectivity", "26"),
        ("--planner", "rules"),
    ] {
        let line = text.lines().position(|l| l.trim_start().starts_with(flag)).unwrap();
        let help = text.lines().nth(line + 1).unwrap();
        assert!(help.contains(&format!("[default: {default}]")), "{flag}: {help}");
    }
    for flag in [
        "--seed",
        "--no-recovery",
        "--out",
        "--jobs",
        "--config",
        "--seeds-per-round",
        "--max-relax-rounds",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn run_writes_metrics_with_success_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = unimanip(&[
        "run",
        golden("pick_place_distractors").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["sr"], 100.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("SR 100.0%"));
}

#[test]
fn no_recovery_leaves_reflection_out_of_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = root().join("scenarios/injection/slip_apple_plate_button.json");
    let out = unimanip(&[
        "run",
        scenario.to_str().unwrap(),
        "--no-recovery",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    // A failed episode is still a successful run.
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("slip_apple_plate_button.trace.jsonl")).unwrap();
    let records: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(records.iter().any(|r| r["e"] == 0));
    assert!(records.iter().all(|r| r["diagnosis"].is_null()));
    let result: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("slip_apple_plate_button.result.json")).unwrap())
            .unwrap();
    assert_eq!(result["success"], false);
}

#[test]
fn config_file_is_applied_below_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "scenarios = [{:?}]\nr_safe = 0.06\nseed = 9\n",
            golden("apple_plate_button").to_str().unwrap()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = unimanip(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let used: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(used["r_safe"], 0.06);
    assert_eq!(used["seed"], 3);
    assert_eq!(used["eps_p0"], 0.01);
}

#[test]
fn planner_url_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_unimanip"))
        .args([
            "run",
            golden("apple_plate_button").to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("UNIMANIP_PLANNER_URL", "http://127.0.0.1:9/plan")
        .env("UNIMANIP_PLANNER_TIMEOUT_MS", "200")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let used: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_config.json")).unwrap()).unwrap();
    assert_eq!(used["planner"], "http://127.0.0.1:9/plan");
    assert_eq!(used["planner_timeout_ms"], 200);
    let result: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("apple_plate_button.result.json")).unwrap())
            .unwrap();
    assert_eq!(result["success"], false);
}

#[test]
fn usage_and_config_errors_exit_nonzero() {
    let scenario = golden("apple_plate_button");
    let s = scenario.to_str().unwrap();
    for args in [
        vec!["run", s, "--bogus"],
        vec!["run", s, "--connectivity", "8"],
        vec!["run", s, "--kernel-side", "4"],
        vec!["run", "no/such/file.json"],
        vec!["run"],
        vec!["frobnicate"],
    ] {
        let out = unimanip(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty(), "{args:?} printed nothing");
    }
}

#[test]
fn map_dumps_round_trip_and_completion_fills_the_rim() {
    let dir = tempfile::tempdir().unwrap();
    let out = unimanip(&[
        "map",
        golden("rimmed_basket").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    let count = |k: &str| summary["occupied"][k].as_u64().unwrap() as usize;
    assert!(count("final") > count("closed"));
    for (file, key) in [
        ("m_init.grid", "init"),
        ("m_closed.grid", "closed"),
        ("m_final.grid", "final"),
    ] {
        let bytes = std::fs::read(dir.path().join(file)).unwrap();
        let g = read_grid(&mut bytes.as_slice()).unwrap();
        assert_eq!(g.count_occupied(), count(key), "{file}");
    }
    let bytes = std::fs::read(dir.path().join("phi.esdf")).unwrap();
    let phi = read_esdf(&mut bytes.as_slice()).unwrap();
    assert_eq!(phi.spec.dims, [75, 70, 45]);
    assert_eq!(phi.values().iter().copied().fold(f64::INFINITY, f64::min), 0.0);
}

#[test]
fn map_of_an_empty_scene_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let mut s: Value = serde_json::from_str(&std::fs::read_to_string(golden("apple_plate_button")).unwrap()).unwrap();
    s["scene"]["bodies"] = Value::Array(vec![]);
    s["command"] = Value::String("do nothing".into());
    s.as_object_mut().unwrap().remove("expect");
    let path = dir.path().join("empty.json");
    std::fs::write(&path, s.to_string()).unwrap();
    let out = unimanip(&["map", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    for k in ["init", "closed", "final"] {
        assert_eq!(summary["occupied"][k], 0, "{k}");
    }
}

#[test]
fn ik_on_a_forward_kinematics_target_needs_no_relaxation() {
    let chain = KinematicChain::builtin_a1();
    let q = chain.home.clone().unwrap();
    let target = chain.forward_kinematics(&q).unwrap().to_array();
    let out = unimanip(&["ik", "--target", &csv(&target)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["feasible"], true);
    assert_eq!(report["relax_rounds_used"], 0);
    assert!(report["position_error"].as_f64().unwrap() < 0.01);
}

#[test]
fn ik_reports_relaxation_and_infeasibility() {
    let chain = root().join("crates/core/assets/a1_arm.json");
    let out = unimanip(&[
        "ik",
        "--chain",
        chain.to_str().unwrap(),
        "--target",
        "0.4,0,0.3,0,1,0,0",
    ]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    assert!(report["relax_rounds_used"].as_u64().unwrap() >= 1);

    let out = unimanip(&["ik", "--target", "2,0,0.3,1,0,0,0"]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["feasible"], false);
    assert_eq!(report["relax_rounds_used"], 3);
    assert!(report["position_error"].as_f64().unwrap() > 1.0);

    let out = unimanip(&["ik", "--target", "0.4,0,0.3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plan_emits_waypoint_lines_ending_at_the_goal() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("path.jsonl");
    let goal = [0.55, 0.1, 0.25, 0.0, 1.0, 0.0, 0.0];
    let out = unimanip(&[
        "plan",
        golden("obstacle_transit").to_str().unwrap(),
        "--goal",
        &csv(&goal),
        "--out",
        file.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let w = Waypoints::read_jsonl(std::io::BufReader::new(std::fs::File::open(&file).unwrap())).unwrap();
    assert!(w.len() > 2);
    let last = w.poses.last().unwrap().to_array();
    for (a, b) in last.iter().zip(goal) {
        assert!((a - b).abs() < 1e-6, "{last:?}");
    }

    let out = unimanip(&[
        "plan",
        golden("obstacle_transit").to_str().unwrap(),
        "--goal",
        "0.55,0.1,-0.25,0,1,0,0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
