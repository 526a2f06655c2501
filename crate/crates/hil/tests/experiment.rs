mod common;

use common::{block_loop, configs, scenario};
use hil::config::ServerConfig;
use hil::harness::pursuit::LoopPath;
use hil::harness::{run_scenario, run_track_experiment, ExperimentConfig, HarnessError};
use hil_core::TickMode;

fn fast_config() -> ServerConfig {
    let mut cfg = ServerConfig::new(block_loop(), configs().join("sensor_types_desk.yaml"), configs().join("sensor_mounts.yaml"));
    cfg.mode = TickMode::SyncFast;
    cfg.seed = 3;
    cfg
}

#[test]
fn repeated_runs_are_bit_identical() {
    let cfg = ExperimentConfig {
        server: fast_config(),
        scenarios: vec![scenario("empty"), scenario("dense")],
        laps: 1,
        sensors: false,
        log_dir: None,
    };
    let a = run_track_experiment(&cfg).unwrap();
    let b = run_track_experiment(&cfg).unwrap();
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert!(x.laps >= 1.0);
        assert_eq!(x.trajectory_log(), y.trajectory_log(), "{} differs", x.scenario);
        assert_eq!(x.max_cross_track.to_bits(), y.max_cross_track.to_bits());
    }
    assert_eq!(a.deviations.len(), 1);
    assert!(a.runs[1].max_actors > a.runs[0].max_actors);
}

#[test]
fn the_ego_stays_in_its_lane() {
    let run = run_scenario(&fast_config(), Some(&scenario("empty")), 1, false).unwrap();
    assert!(run.max_cross_track < 1.75, "max cross-track {}", run.max_cross_track);
    assert_eq!(run.overruns, 0);
    assert_eq!(run.trajectory.len() as u64, run.ticks);
}

#[test]
fn logs_are_written_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        server: fast_config(),
        scenarios: vec![scenario("traffic")],
        laps: 1,
        sensors: false,
        log_dir: Some(dir.path().to_path_buf()),
    };
    let report = run_track_experiment(&cfg).unwrap();
    let written = std::fs::read(dir.path().join("traffic.ndjson")).unwrap();
    assert_eq!(written, report.runs[0].trajectory_log());
    assert!(report.render().contains("traffic"));
}

#[test]
fn zero_laps_is_refused() {
    let cfg = ExperimentConfig { server: fast_config(), scenarios: vec![scenario("empty")], laps: 0, sensors: false, log_dir: None };
    assert!(matches!(run_track_experiment(&cfg), Err(HarnessError::ZeroLaps)));
}

#[test]
fn a_road_without_a_loop_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("line.json");
    let line = hil_core::RoadNetwork::new(vec![hil_core::road::Lane::new(
        1,
        3.5,
        vec![hil_core::Vec3::zeros(), hil_core::Vec3::new(100.0, 0.0, 0.0)],
        vec![],
    )])
    .unwrap();
    std::fs::write(&map, line.to_json()).unwrap();
    let mut cfg = fast_config();
    cfg.map = map;
    assert!(matches!(run_scenario(&cfg, None, 1, false), Err(HarnessError::NoLoop(_))));
}

#[test]
fn loop_covers_the_inner_ring() {
    let road = hil_core::RoadNetwork::load(block_loop()).unwrap();
    let path = LoopPath::from_lane(&road, 1).unwrap();
    assert_eq!(path.lanes(), &[1, 2, 3, 4]);
}

#[test]
fn sensor_cadence_uses_sim_stamps() {
    let mut cfg = fast_config();
    let dir = tempfile::tempdir().unwrap();
    let (types, mounts) = common::light_kit(dir.path());
    cfg.sensor_types = types;
    cfg.sensor_mounts = mounts;
    let run = run_scenario(&cfg, Some(&scenario("empty")), 1, true).unwrap();
    let record = |topic: &str| run.topics.iter().find(|m| m.topic == topic).unwrap().clone();
    let imu = record("/sensing/imu/imu");
    assert!((imu.mean_period_ms - 50.0).abs() < 1e-6, "{imu:?}");
    // Schedules are aligned to the tick grid, so a sensor whose first frame
    // lands off-grid has one short first period.
    let lidar = record("/sensing/lidar/front/points");
    assert!((lidar.p99_period_ms - 100.0).abs() < 1e-6, "{lidar:?}");
    assert!((lidar.mean_period_ms - 100.0).abs() < 0.5, "{lidar:?}");
}
