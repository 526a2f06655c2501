//! Repeated-lap track experiments: the ego follows a lane loop under several
//! scenarios while the harness records its trajectory, tick timing and the
//! sensor output cadence.

use super::measure::{Arrival, MetricsRecord, TopicLog};
use super::pursuit::{LoopPath, PurePursuit};
use super::HarnessError;
use crate::config::{mode_name, ServerConfig};
use crate::sim::Sim;
use hil_core::actuation::ActuationConfig;
use hil_core::sensors::build_sensor_kit;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Template for every run; its scenario is replaced per run.
    pub server: ServerConfig,
    pub scenarios: Vec<PathBuf>,
    pub laps: u32,
    /// Fire the sensor kit every tick and report per-topic cadence.
    pub sensors: bool,
    /// Where per-scenario trajectory logs are written, if anywhere.
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub tick: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
    pub steer_cmd: f64,
    pub accel_cmd: f64,
    pub cross_track: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub scenario: String,
    pub mode: String,
    pub ticks: u64,
    pub laps: f64,
    pub max_cross_track: f64,
    pub mean_cross_track: f64,
    pub overruns: usize,
    pub mean_tick_ms: f64,
    pub p99_tick_ms: f64,
    pub max_actors: usize,
    /// Sensor cadence over sim-time stamps; empty without sensors.
    pub topics: Vec<MetricsRecord>,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryPoint>,
}

impl ScenarioRun {
    /// The trajectory as newline-delimited JSON, one record per tick.
    pub fn trajectory_log(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.trajectory.len() * 160);
        for p in &self.trajectory {
            serde_json::to_writer(&mut out, p).expect("trajectory point serializes");
            out.push(b'\n');
        }
        out
    }
}

/// Per-tick position difference between a run and the first run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Deviation {
    pub baseline: String,
    pub scenario: String,
    pub compared_ticks: usize,
    pub max_m: f64,
    pub mean_m: f64,
    /// Difference of the two runs' maximum cross-track errors.
    pub max_cross_track_delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub laps: u32,
    pub runs: Vec<ScenarioRun>,
    pub deviations: Vec<Deviation>,
}

impl ExperimentReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<18} {:>6} {:>7} {:>10} {:>10} {:>9} {:>9} {:>9} {:>7}\n",
            "scenario", "laps", "ticks", "max xte m", "mean xte m", "overruns", "tick ms", "p99 ms", "actors"
        );
        for r in &self.runs {
            out += &format!(
                "{:<18} {:>6.2} {:>7} {:>10.4} {:>10.4} {:>9} {:>9.3} {:>9.3} {:>7}\n",
                r.scenario, r.laps, r.ticks, r.max_cross_track, r.mean_cross_track, r.overruns, r.mean_tick_ms, r.p99_tick_ms, r.max_actors
            );
        }
        for d in &self.deviations {
            out += &format!(
                "deviation {} vs {}: max {:.6} m, mean {:.6} m over {} ticks\n",
                d.scenario, d.baseline, d.max_m, d.mean_m, d.compared_ticks
            );
        }
        out
    }
}

fn scenario_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn percentile(mut values: Vec<f64>, p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = (p / 100.0 * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Drives one scenario for `laps` laps.
pub fn run_scenario(
    server: &ServerConfig,
    scenario: Option<&Path>,
    laps: u32,
    sensors: bool,
) -> Result<ScenarioRun, HarnessError> {
    if laps == 0 {
        return Err(HarnessError::ZeroLaps);
    }
    let mut cfg = server.clone();
    cfg.scenario = scenario.map(Path::to_path_buf);
    cfg.sync_primary = None;
    let wheelbase = match &cfg.actuation {
        Some(p) => ActuationConfig::load(p).map_err(|e| HarnessError::Setup(e.to_string()))?.wheelbase,
        None => ActuationConfig::default().wheelbase,
    };
    let Sim { mut world, road, specs, mailbox, status, ego, .. } =
        Sim::build(&cfg).map_err(|e| HarnessError::Setup(e.to_string()))?;
    let ego = ego.ok_or_else(|| HarnessError::Setup("no ego".into()))?;
    let first = world.snapshot();
    let start = first.actor(ego).ok_or_else(|| HarnessError::Setup("ego missing from snapshot".into()))?.pose;
    let mut pursuit = PurePursuit::new(LoopPath::through(&road, &start)?, wheelbase, &start);
    let goal = laps as f64 * pursuit.path().length();
    // Generous cap: three times the nominal lap time plus start-up.
    let max_ticks = ((goal / pursuit.target_speed * 3.0 + 30.0) / cfg.dt).ceil() as u64;

    let mut kit = if sensors {
        Some(build_sensor_kit(specs, cfg.dt, &first, road.geo_origin, cfg.seed).map_err(|e| HarnessError::Setup(e.to_string()))?)
    } else {
        None
    };
    let mut topic_logs: BTreeMap<String, Vec<Arrival>> = BTreeMap::new();
    let mut trajectory = Vec::new();
    let mut tick_ms = Vec::new();
    let mut max_actors = 0;
    let mut snapshot = first;
    let mut speed = 0.0;
    loop {
        let pose = snapshot.actor(ego).expect("ego is never destroyed").pose;
        let step = pursuit.step(&pose, speed, snapshot.sim_time);
        if step.progress >= goal {
            break;
        }
        if snapshot.tick_index >= max_ticks {
            return Err(HarnessError::Stalled { scenario: cfg.scenario.as_deref().map(scenario_label).unwrap_or_default(), laps: pursuit.laps() });
        }
        mailbox.submit(step.command).map_err(|e| HarnessError::Setup(e.to_string()))?;
        let started = Instant::now();
        snapshot = world.tick();
        if let Some(kit) = kit.as_mut() {
            let outputs = kit.fire_all(&snapshot).map_err(|e| HarnessError::Setup(e.to_string()))?;
            for out in outputs {
                topic_logs.entry(out.topic).or_default().push(Arrival { wall: out.stamp, stamp: out.stamp, bytes: out.payload.len() });
            }
        }
        tick_ms.push(started.elapsed().as_secs_f64() * 1e3);
        max_actors = max_actors.max(snapshot.actors().len());
        speed = status.latest().map(|r| r.status.longitudinal_velocity).unwrap_or(0.0);
        let ego_now = snapshot.actor(ego).expect("ego is never destroyed");
        let (_, cross_track) = pursuit.path().locate(&ego_now.pose.position);
        trajectory.push(TrajectoryPoint {
            tick: snapshot.tick_index,
            t: snapshot.sim_time,
            x: ego_now.pose.position.x,
            y: ego_now.pose.position.y,
            yaw: ego_now.pose.yaw,
            speed,
            steer_cmd: step.command.target_steer,
            accel_cmd: step.command.target_accel,
            cross_track,
        });
    }
    world.begin_shutdown();

    let topics = topic_logs
        .into_iter()
        .filter_map(|(topic, arrivals)| TopicLog { topic, arrivals, drops: 0, resolution: None }.metrics(None).ok())
        .collect();
    let n = trajectory.len().max(1) as f64;
    Ok(ScenarioRun {
        scenario: cfg.scenario.as_deref().map(scenario_label).unwrap_or_else(|| "none".into()),
        mode: mode_name(cfg.mode).into(),
        ticks: snapshot.tick_index,
        laps: pursuit.laps(),
        max_cross_track: trajectory.iter().map(|p| p.cross_track).fold(0.0, f64::max),
        mean_cross_track: trajectory.iter().map(|p| p.cross_track).sum::<f64>() / n,
        overruns: world.overruns().len(),
        mean_tick_ms: tick_ms.iter().sum::<f64>() / tick_ms.len().max(1) as f64,
        p99_tick_ms: percentile(tick_ms, 99.0),
        max_actors,
        topics,
        trajectory,
    })
}

fn deviation(baseline: &ScenarioRun, run: &ScenarioRun) -> Deviation {
    let pairs: Vec<f64> = baseline
        .trajectory
        .iter()
        .zip(&run.trajectory)
        .map(|(a, b)| (a.x - b.x).hypot(a.y - b.y))
        .collect();
    Deviation {
        baseline: baseline.scenario.clone(),
        scenario: run.scenario.clone(),
        compared_ticks: pairs.len(),
        max_m: pairs.iter().copied().fold(0.0, f64::max),
        mean_m: pairs.iter().sum::<f64>() / pairs.len().max(1) as f64,
        max_cross_track_delta: (run.max_cross_track - baseline.max_cross_track).abs(),
    }
}

pub fn run_track_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    if cfg.laps == 0 {
        return Err(HarnessError::ZeroLaps);
    }
    if cfg.scenarios.is_empty() {
        return Err(HarnessError::Setup("no scenarios given".into()));
    }
    let mut runs = Vec::with_capacity(cfg.scenarios.len());
    for path in &cfg.scenarios {
        let run = run_scenario(&cfg.server, Some(path), cfg.laps, cfg.sensors)?;
        log::info!("{}: {:.2} laps in {} ticks, max cross-track {:.3} m", run.scenario, run.laps, run.ticks, run.max_cross_track);
        if let Some(dir) = &cfg.log_dir {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
            let file = dir.join(format!("{}.ndjson", run.scenario));
            std::fs::File::create(&file)
                .and_then(|mut f| f.write_all(&run.trajectory_log()))
                .map_err(|e| HarnessError::Io(format!("{}: {e}", file.display())))?;
        }
        runs.push(run);
    }
    let deviations = runs.iter().skip(1).map(|r| deviation(&runs[0], r)).collect();
    Ok(ExperimentReport { laps: cfg.laps, runs, deviations })
}
