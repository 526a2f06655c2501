//! Acceptance run over the whole harness, one PASS/FAIL line per criterion.
//!
//! Set `HIL_ACCEPTANCE_QUICK=1` to shorten the live runs (A1, A2, A4 status
//! cadence, A9); their lines are then tagged `quick`.

mod common;

use hil::config::ServerConfig;
use hil::harness::{compare_report, run_track_experiment, ExperimentConfig, ReferenceTable, TopicLog, Verdict};
use hil::harness::measure::Arrival;
use hil::server::HilServer;
use hil::services::{ServiceHost, ServiceKind, ServiceOptions, ServiceStatus};
use hil::topics;
use hil_core::actuation::{
    calibrate_throttle_map, filter_command, ControlCommand, ControlLimits, Gear, LongitudinalController,
    LongitudinalMode, LongitudinalPlant, PlantParams, VehicleStatus,
};
use hil_core::geometry::planar_distance;
use hil_core::groundtruth::{detected_objects, predicted_objects, AgentPlans, GroundTruthConfig, PredictionSource, Tracker};
use hil_core::road::Lane;
use hil_core::scenario::{
    PedFlow, Position, ScenarioConfig, ScenarioEngine, Sink, Source, StaticKind, StaticPlacement, TrafficVehicle,
    WeatherParams,
};
use hil_core::sensors::config::{LidarParams, SensorParams};
use hil_core::sensors::lidar::LidarSampler;
use hil_core::sensors::parse_sensor_types;
use hil_core::sensors::rays::RaySet;
use hil_core::sensors::scene::Scene;
use hil_core::sync::{decode_batch, encode_batch, SyncError, SyncReceiver, SyncSender};
use hil_core::world::WorldEventKind;
use hil_core::{Actor, ActorId, ActorKind, ManagedBy, Pose, RoadNetwork, Snapshot, TickMode, Vec3, World};
use hil_transport::Qos;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

type Verdicts = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn guarded(f: impl FnOnce() -> Verdicts) -> Verdicts {
    std::panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn report(id: &str, tag: &str, started: Instant, outcome: &Verdicts) {
    let (word, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{id} {word}{tag} [{:.1} s] {detail}", started.elapsed().as_secs_f64());
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn actor(id: u64, kind: ActorKind, pose: Pose, velocity: Vec3, extent: Vec3) -> Actor {
    Actor {
        id: ActorId(id),
        kind,
        pose,
        velocity,
        acceleration: Vec3::zeros(),
        yaw_rate: 0.0,
        bbox_extent: extent,
        managed_by: ManagedBy::None,
    }
}

// ---------------------------------------------------------------- A3

fn desk_lidars() -> Vec<(String, LidarParams)> {
    let text = std::fs::read_to_string(common::configs().join("sensor_types.yaml")).unwrap();
    parse_sensor_types(&text, None)
        .unwrap()
        .into_iter()
        .filter_map(|(name, def)| match def.params {
            SensorParams::Lidar(p) => Some((name, p)),
            _ => None,
        })
        .collect()
}

/// Slab-method ray/oriented-box entry distance, written out independently.
fn oracle_box(origin: &Vec3, dir: &Vec3, a: &Actor) -> Option<f64> {
    let center = a.box_pose();
    let (c, s) = (center.yaw.cos(), center.yaw.sin());
    let rel = origin - center.position;
    let o = [c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z];
    let d = [c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z];
    let h = [a.bbox_extent.x, a.bbox_extent.y, a.bbox_extent.z];
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i].abs() > h[i] {
                return None;
            }
            continue;
        }
        let (t1, t2) = ((-h[i] - o[i]) / d[i], (h[i] - o[i]) / d[i]);
        lo = lo.max(t1.min(t2));
        hi = hi.min(t1.max(t2));
    }
    (lo <= hi && lo > 0.0).then_some(lo)
}

fn oracle_hit(sensor: &Pose, dir: &Vec3, actors: &[Actor], range: f64) -> Option<f64> {
    let world_dir = sensor.transform_vector(dir);
    let o = sensor.position;
    let ground = (world_dir.z < 0.0 && o.z > 0.0).then(|| -o.z / world_dir.z);
    actors
        .iter()
        .filter_map(|a| oracle_box(&o, &world_dir, a))
        .chain(ground)
        .min_by(f64::total_cmp)
        .filter(|&t| t <= range)
}

fn a3() -> Verdicts {
    let lidars = desk_lidars();
    let expected = [("innovusion", 228_000usize), ("ouster", 131_200)];
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (name, count) in expected {
        let (_, params) = lidars.iter().find(|(n, _)| n == name).ok_or(format!("{name} missing from the kit"))?;
        let rays = RaySet::for_lidar(params).map_err(|e| e.to_string())?;
        ensure!(rays.len() == count, "{name}: {} rays, expected {count}", rays.len());
        let columns = (params.horizontal_fov / params.horizontal_resolution + 1e-9).floor() as usize;
        ensure!(columns * params.vertical_channels as usize == count, "{name}: counting rule disagrees");

        let mut owners = vec![0u32; rays.len()];
        let sectors = rays.sectors();
        for sector in &sectors {
            ensure!(sector.width <= 170.0, "{name}: sector {} deg wide", sector.width);
            for &r in &sector.rays {
                owners[r as usize] += 1;
            }
        }
        ensure!(owners.iter().all(|&n| n == 1), "{name}: frustum split lost or duplicated rays");

        let actors: Vec<Actor> = (0..10)
            .map(|i| {
                let r = rng.random_range(4.0..40.0);
                let bearing = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let extent = Vec3::new(rng.random_range(0.3..3.0), rng.random_range(0.3..1.5), rng.random_range(0.5..2.0));
                let pose = Pose::planar(r * bearing.cos(), r * bearing.sin(), rng.random_range(-3.0..3.0));
                actor(10 + i, ActorKind::Vehicle, pose, Vec3::zeros(), extent)
            })
            .collect();
        let scene = Scene::from_snapshot(&Snapshot::new(0.0, 0, None, actors.clone()), None);
        let sensor = Pose::new(Vec3::new(0.4, -0.1, 1.9), 0.01, -0.02, rng.random_range(-1.0..1.0));
        let mut sampler = LidarSampler::new(params.clone(), 1).map_err(|e| e.to_string())?;
        let points = sampler.scan_exact(&sensor, &scene);
        let mut by_ray: Vec<Option<Vec3>> = vec![None; rays.len()];
        for (ray, p) in points {
            ensure!(by_ray[ray as usize].is_none(), "{name}: ray {ray} returned twice");
            by_ray[ray as usize] = Some(p);
        }
        let (mut worst, mut box_hits) = (0.0f64, 0usize);
        for (i, ray) in sampler.rays().rays().iter().enumerate() {
            match (oracle_hit(&sensor, &ray.dir, &actors, params.range), by_ray[i]) {
                (None, None) => {}
                (Some(t), Some(got)) => {
                    worst = worst.max((ray.dir * t - got).norm());
                    if sensor.transform_point(&got).z.abs() > 1e-6 {
                        box_hits += 1;
                    }
                }
                (want, got) => return Err(format!("{name}: ray {i} oracle {want:?}, sampler {got:?}")),
            }
        }
        ensure!(worst <= 1e-6, "{name}: worst point error {worst:e} m");
        ensure!(box_hits > 0, "{name}: random boxes hit no ray");
        notes.push(format!("{name} {count} rays, {} sectors, max err {worst:.1e} m, {box_hits} box hits", sectors.len()));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- A4

fn a4_offline() -> Verdicts {
    let limits = ControlLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20_000 {
        let a = rng.random_range(-20.0..20.0);
        let out = filter_command(&ControlCommand::new(0.0, a, 0.0), &limits).map_err(|e| e.to_string())?;
        let want = a.clamp(-3.0, 3.5);
        ensure!(out.target_accel == want, "accel {a} filtered to {}", out.target_accel);
    }

    let mut ctl = LongitudinalController::new(LongitudinalMode::AccelIntegration, limits).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        ctl.step(&ControlCommand::new(0.0, 2.0, 0.0), 0.05).map_err(|e| e.to_string())?;
    }
    let v = ctl.state().speed;
    ensure!((v - 10.0).abs() <= 1e-9, "mode C speed after 5 s: {v}");

    let truth = PlantParams { noise_std: 0.0, ..Default::default() };
    let mut plant = LongitudinalPlant::new(truth, 1);
    let speeds: Vec<f64> = (0..=10).map(|i| i as f64 * 2.0).collect();
    let map = calibrate_throttle_map(&mut plant, &[0.0, 0.2, 0.4, 0.6], &speeds, 1, 5).map_err(|e| e.to_string())?;
    let mut calib_err = 0.0f64;
    for fit in map.fits() {
        calib_err = calib_err.max((fit.slope + truth.drag).abs());
        calib_err = calib_err.max((fit.intercept - (truth.throttle_gain * fit.throttle - truth.offset)).abs());
    }
    ensure!(calib_err <= 1e-6, "calibration error {calib_err:e}");

    let noisy = PlantParams::default();
    let mut calib_plant = LongitudinalPlant::new(noisy, 3);
    let throttles: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.25).collect();
    let map = calibrate_throttle_map(&mut calib_plant, &throttles, &speeds, 8, 25).map_err(|e| e.to_string())?;
    let mode = LongitudinalMode::ThrottleMapPi { kp: 0.5, ki: 0.1, map, plant: noisy, seed: 42 };
    let mut ctl = LongitudinalController::new(mode, limits).map_err(|e| e.to_string())?;
    let judge = LongitudinalPlant::new(noisy, 0);
    let (dt, target) = (0.05, 1.0);
    let mut errors = Vec::new();
    for k in 0..120 {
        let s = ctl.step(&ControlCommand::new(0.0, target, 0.0), dt).map_err(|e| e.to_string())?;
        if (k + 1) as f64 * dt >= 3.0 {
            let throttle = s.throttle.ok_or("mode B reported no throttle")?;
            errors.push(judge.noiseless_accel(s.speed - s.applied_accel * dt, throttle) - target);
        }
    }
    let mean_err = errors.iter().sum::<f64>() / errors.len() as f64;
    ensure!(mean_err.abs() < 0.1, "mode B steady-state error {mean_err}");
    Ok(format!("clamp exact, mode C v={v:.12}, mode B err {mean_err:+.4}, calibration err {calib_err:.1e}"))
}

fn a4_status(quick: bool) -> Verdicts {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = HilServer::start(common::light_config(dir.path(), TickMode::SyncRealtime)).map_err(|e| e.to_string())?;
    let gear_sub = server.bus().subscribe(topics::GEAR_STATUS, Qos::Reliable(16)).map_err(|e| e.to_string())?;
    let mut host = ServiceHost::new(server.control_url(), Some(server.bus().clone()), ServiceOptions::default());
    host.start(ServiceKind::VehicleInterface).map_err(|e| e.to_string())?;
    let first = gear_sub.recv_timeout(Duration::from_secs(10)).map_err(|e| e.to_string())?.ok_or("no gear status")?;
    let gear = VehicleStatus::decode_gear(&first.payload).map_err(|e| e.to_string())?.1;
    ensure!(gear == Gear::Drive, "initial gear {gear:?}");
    drop(gear_sub);
    let window = if quick { 3.0 } else { 20.0 };
    let names = [topics::STEERING_STATUS, topics::GEAR_STATUS, topics::VELOCITY_STATUS];
    let logs = collect_for(server.bus(), &names, Duration::from_secs_f64(window));
    let mut notes = Vec::new();
    for log in logs {
        let m = log.metrics(None).map_err(|e| e.to_string())?;
        ensure!((m.mean_period_ms - 20.0).abs() <= 1.0, "{} period {:.3} ms", m.topic, m.mean_period_ms);
        notes.push(format!("{:.3}", m.mean_period_ms));
    }
    Ok(format!("status periods {} ms, gear Drive", notes.join("/")))
}

// ---------------------------------------------------------------- A5

struct Trajectory {
    segments: Vec<(f64, Vec3, Vec3, Vec3)>,
}

impl Trajectory {
    fn random(rng: &mut ChaCha8Rng, max_accel: f64, duration: f64) -> Self {
        let (mut t, mut p, mut v) = (0.0, Vec3::zeros(), Vec3::new(rng.random_range(-5.0..10.0), 0.0, 0.0));
        let mut segments = Vec::new();
        while t < duration + 1.0 {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let a = Vec3::new(angle.cos(), angle.sin(), 0.0) * rng.random_range(0.0..=max_accel);
            let len = rng.random_range(0.1..0.6);
            segments.push((t, p, v, a));
            p += v * len + a * (0.5 * len * len);
            v += a * len;
            t += len;
        }
        Self { segments }
    }

    fn state(&self, t: f64) -> (Vec3, Vec3) {
        let &(t0, p, v, a) = self.segments.iter().rev().find(|s| s.0 <= t).expect("t >= 0");
        let dt = t - t0;
        (p + v * dt + a * (0.5 * dt * dt), v + a * dt)
    }

    fn actor(&self, t: f64) -> Actor {
        let (p, v) = self.state(t);
        let mut a = actor(1, ActorKind::EgoVehicle, Pose::new(p, 0.0, 0.0, 0.0), v, Vec3::new(2.4, 1.0, 0.8));
        a.managed_by = ManagedBy::External;
        a
    }
}

/// Largest replica error after the first delivery, with batches delayed by
/// a latency drawn from `latency` and the secondary stepping irregularly.
fn replicate(traj: &Trajectory, period: f64, latency: (f64, f64), seed: u64, duration: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut secondary = World::new(Arc::new(RoadNetwork::empty()), 0.05, TickMode::Async, 3).unwrap();
    let mut receiver = SyncReceiver::new(20, period);
    let replica = receiver.register(&mut secondary, &traj.actor(0.0)).unwrap();
    let mut sender = SyncSender::new(period);
    sender.set_ids(vec![ActorId(1)]);
    let mut in_flight: Vec<(f64, Vec<u8>)> = Vec::new();
    let mut tick = 0u64;
    let (mut worst, mut delivered) = (0.0f64, false);
    while secondary.clock().sim_time < duration {
        let step = rng.random_range(0.005..0.04);
        let next = secondary.clock().sim_time + step;
        while tick as f64 * 0.05 <= next {
            let t = tick as f64 * 0.05;
            let snap = Snapshot::new(t, tick, Some(ActorId(1)), vec![traj.actor(t)]);
            if let Some(batch) = sender.poll(&snap, &BTreeMap::new()) {
                let delay = if latency.1 > latency.0 { rng.random_range(latency.0..=latency.1) } else { latency.0 };
                in_flight.push((t + delay, encode_batch(&batch)));
            }
            tick += 1;
        }
        let (ready, waiting): (Vec<_>, Vec<_>) = in_flight.drain(..).partition(|(at, _)| *at <= next);
        in_flight = waiting;
        for (_, raw) in ready {
            receiver.receive(decode_batch(&raw).unwrap(), next);
            delivered = true;
        }
        let snap = secondary.tick_with_step(step);
        receiver.apply(&mut secondary);
        if delivered {
            let got = secondary.actor(replica).unwrap().pose.position;
            worst = worst.max((traj.state(snap.sim_time).0 - got).norm());
        }
    }
    assert!(delivered, "nothing delivered");
    worst
}

fn a5() -> Verdicts {
    let constant = Trajectory { segments: vec![(0.0, Vec3::new(3.0, -1.0, 0.0), Vec3::new(12.0, 4.0, 0.0), Vec3::zeros())] };
    let mut cv_worst = 0.0f64;
    for (i, latency) in [(0.0, 0.0), (0.05, 0.05), (0.1, 0.1), (0.0, 0.1)].into_iter().enumerate() {
        cv_worst = cv_worst.max(replicate(&constant, 0.1, latency, i as u64, 20.0));
    }
    ensure!(cv_worst <= 1e-9, "constant-velocity error {cv_worst:e} m");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tightest = f64::INFINITY;
    for run in 0..40 {
        let traj = Trajectory::random(&mut rng, 3.0, 15.0);
        let period: f64 = [0.05, 0.1, 0.2][run % 3];
        let latency = rng.random_range(0.0..=0.1);
        let bound = 0.5 * 3.0 * (period + latency).powi(2);
        let err = replicate(&traj, period, (latency, latency), run as u64, 15.0);
        ensure!(err <= bound + 1e-9, "run {run}: error {err} > bound {bound}");
        tightest = tightest.min(bound - err);
    }

    let mut world = World::new(Arc::new(RoadNetwork::empty()), 0.05, TickMode::Async, 0).unwrap();
    let mut receiver = SyncReceiver::new(20, 0.1);
    for i in 0..20u64 {
        let a = actor(100 + i, ActorKind::Vehicle, Pose::planar(10.0 * i as f64, 0.0, 0.0), Vec3::zeros(), Vec3::new(2.4, 1.0, 0.8));
        receiver.register(&mut world, &a).map_err(|e| e.to_string())?;
    }
    let extra = actor(200, ActorKind::Vehicle, Pose::planar(500.0, 0.0, 0.0), Vec3::zeros(), Vec3::new(2.4, 1.0, 0.8));
    let rejected = receiver.register(&mut world, &extra);
    ensure!(rejected == Err(SyncError::CapacityExceeded { capacity: 20 }), "21st registration: {rejected:?}");
    Ok(format!("cv error {cv_worst:.1e} m, 40 random runs within bound (min margin {tightest:.2e} m), 21st rejected"))
}

// ---------------------------------------------------------------- A6

const DT: f64 = 0.05;

fn ticks(seconds: f64) -> usize {
    (seconds / DT).round() as usize
}

fn straight(length: f64) -> Arc<RoadNetwork> {
    Arc::new(RoadNetwork::new(vec![Lane::new(1, 3.5, vec![Vec3::zeros(), Vec3::new(length, 0.0, 0.0)], vec![])]).unwrap())
}

fn forking() -> Arc<RoadNetwork> {
    let v = |x, y| Vec3::new(x, y, 0.0);
    Arc::new(
        RoadNetwork::new(vec![
            Lane::new(1, 3.5, vec![v(0.0, 0.0), v(60.0, 0.0)], vec![2, 3]),
            Lane::new(2, 3.5, vec![v(60.0, 0.0), v(120.0, 30.0)], vec![4, 5]),
            Lane::new(3, 3.5, vec![v(60.0, 0.0), v(120.0, -30.0)], vec![]),
            Lane::new(4, 3.5, vec![v(120.0, 30.0), v(200.0, 30.0)], vec![]),
            Lane::new(5, 3.5, vec![v(120.0, 30.0), v(160.0, 90.0)], vec![]),
        ])
        .unwrap(),
    )
}

fn busy(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        statics: vec![StaticPlacement { kind: StaticKind::Prop, position: Position::new(30.0, 8.0) }],
        traffic_vehicles: vec![
            TrafficVehicle { position: Position::new(20.0, 0.0), seed: 3 },
            TrafficVehicle { position: Position::new(45.0, 0.0), seed: 4 },
        ],
        sources: vec![Source { position: Position::new(2.0, 0.0), delay_s: 1.5 }],
        sinks: vec![
            Sink { position: Position::new(140.0, 60.0), radius_m: 4.0 },
            Sink { position: Position::new(100.0, -20.0), radius_m: 4.0 },
            Sink { position: Position::new(190.0, 30.0), radius_m: 4.0 },
        ],
        ped_flows: vec![PedFlow {
            path: vec![Position::new(10.0, -8.0), Position::new(50.0, -8.0)],
            crowd_size: 4,
            respawn_delay_s: 1.0,
            walk_speed: 1.4,
        }],
        weather: WeatherParams { cloudiness: 30.0, precipitation: 10.0, ..Default::default() },
        global_seed: seed,
        ..Default::default()
    }
}

fn a6() -> Verdicts {
    let mut w = World::new(straight(1000.0), DT, TickMode::SyncFast, 0).unwrap();
    let cfg = ScenarioConfig { sources: vec![Source { position: Position::new(10.0, 0.0), delay_s: 2.0 }], ..Default::default() };
    let mut engine = ScenarioEngine::new(cfg).map_err(|e| e.to_string())?;
    engine.start(&mut w);
    for _ in 0..ticks(60.0) {
        w.tick();
        engine.step(&mut w);
    }
    let spawned = engine.source_stats()[0].spawned;
    ensure!(spawned.abs_diff(30) <= 1, "source spawned {spawned} in 60 s");

    // Busy scenario with the ego parked inside a sink.
    let sink_check = |seed: u64| -> Result<(Vec<hil_core::world::WorldEvent>, usize, u64), String> {
        let mut w = World::new(forking(), DT, TickMode::SyncFast, 9).unwrap();
        let ego = w
            .spawn_actor(ActorKind::EgoVehicle, Pose::planar(190.0, 30.0, 0.0), Vec3::new(2.4, 1.0, 0.8), ManagedBy::External)
            .map_err(|e| e.to_string())?;
        let config = busy(seed);
        let engine = Arc::new(Mutex::new(ScenarioEngine::new(config.clone()).map_err(|e| e.to_string())?));
        engine.lock().unwrap().start(&mut w);
        w.add_step_hook(Box::new(engine.clone()));
        let mut checked = 0;
        for k in 0..ticks(60.0) {
            let snap = w.tick();
            ensure!(snap.actor(ego).is_some(), "ego destroyed at tick {k}");
            for sink in &config.sinks {
                for a in snap.non_ego() {
                    let d = planar_distance(&a.pose.position, &sink.position.to_vec3());
                    ensure!(d > sink.radius_m, "actor {} inside sink at tick {k}", a.id);
                }
            }
            let e = engine.lock().unwrap();
            let flow = e.flow_stats()[0];
            ensure!(flow.population() == 4, "flow population {} at tick {k}", flow.population());
            checked += 1;
        }
        let removals = engine.lock().unwrap().sink_removals();
        Ok((w.events().to_vec(), checked, removals))
    };
    let (log_a, checked, removals) = sink_check(17)?;
    ensure!(removals > 0, "no sink removals exercised");
    let (log_b, _, _) = sink_check(17)?;
    ensure!(log_a == log_b, "event logs differ for identical seeds");
    let spawns = log_a.iter().filter(|e| matches!(e.kind, WorldEventKind::Spawned { .. })).count();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("busy.json");
    busy(5).save(&path).map_err(|e| e.to_string())?;
    let loaded = ScenarioConfig::load(&path).map_err(|e| e.to_string())?;
    ensure!(loaded == busy(5), "scenario round trip differs");
    Ok(format!(
        "{spawned} spawns in 60 s, sinks clear over {checked} ticks ({removals} removals), crowd held, {} events ({spawns} spawns) reproduced, round trip equal",
        log_a.len()
    ))
}

// ---------------------------------------------------------------- A7

fn a7() -> Verdicts {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kinds = [ActorKind::Vehicle, ActorKind::Pedestrian, ActorKind::StaticProp];
    for n in 0..1000 {
        let count = rng.random_range(0..30);
        let mut actors: Vec<Actor> = (0..count)
            .map(|i| {
                let kind = kinds[rng.random_range(0..kinds.len())];
                let pose = Pose::planar(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-3.0..3.0));
                actor(i as u64 + 1, kind, pose, Vec3::zeros(), Vec3::new(1.0, 0.5, 0.8))
            })
            .collect();
        let ego = (count > 0 && rng.random_bool(0.7)).then(|| {
            let i = rng.random_range(0..count);
            actors[i].kind = ActorKind::EgoVehicle;
            actors[i].id
        });
        let snap = Snapshot::new(0.0, 0, ego, actors.clone());
        let mut got: Vec<ActorId> = detected_objects(&snap).iter().map(|d| d.id).collect();
        let mut want: Vec<ActorId> = actors.iter().map(|a| a.id).filter(|&id| Some(id) != ego).collect();
        got.sort();
        want.sort();
        ensure!(got == want, "snapshot {n}: detected {got:?}, non-ego {want:?}");
    }

    let cfg = GroundTruthConfig::default();
    let mut span_range = (f64::INFINITY, 0.0f64);
    for dt in [0.02, 0.05, 0.1] {
        let mut tracker = Tracker::new(cfg);
        for k in 0..ticks(6.0) {
            let t = k as f64 * dt;
            let a = actor(2, ActorKind::Vehicle, Pose::planar(t, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.4, 1.0, 0.8));
            let tracks = tracker.update(&Snapshot::new(t, k as u64, None, vec![a])).map_err(|e| e.to_string())?;
            if t >= cfg.history_buffer {
                let span = tracks[0].span();
                ensure!(span >= cfg.history_buffer - dt - 1e-9 && span <= cfg.history_buffer + 1e-9, "dt {dt}: span {span}");
                span_range = (span_range.0.min(span), span_range.1.max(span));
            }
        }
    }

    let road = RoadNetwork::load(common::block_loop()).map_err(|e| e.to_string())?;
    let lanes: Vec<&Lane> = road.lanes().collect();
    let mut worst_offset = 0.0f64;
    for n in 0..500 {
        let lane = lanes[rng.random_range(0..lanes.len())];
        let base = lane.pose_at(rng.random_range(0.0..lane.length()));
        let lateral = rng.random_range(-1.0..1.0);
        let yaw = base.yaw + rng.random_range(-0.2..0.2);
        let pos = base.position + Vec3::new(-base.yaw.sin(), base.yaw.cos(), 0.0) * lateral;
        let speed = rng.random_range(0.5..15.0);
        let car = actor(3, ActorKind::Vehicle, Pose::planar(pos.x, pos.y, yaw), Vec3::new(speed * yaw.cos(), speed * yaw.sin(), 0.0), Vec3::new(2.4, 1.0, 0.8));
        let preds = predicted_objects(&Snapshot::new(0.0, 0, None, vec![car]), &road, &AgentPlans::new(), &cfg);
        let p = &preds[0];
        ensure!(p.source == PredictionSource::RoadWaypoints, "sample {n}: source {:?}", p.source);
        for point in &p.path {
            let proj = road.project(&point.pose.position).map_err(|e| e.to_string())?;
            let half = road.lane(proj.lane).map(|l| l.width / 2.0).unwrap_or(0.0);
            ensure!(proj.distance <= half, "sample {n}: waypoint {} m off the centerline", proj.distance);
            worst_offset = worst_offset.max(proj.distance);
        }
    }

    let mut w = World::new(forking(), DT, TickMode::SyncFast, 0).unwrap();
    let engine = Arc::new(Mutex::new(
        ScenarioEngine::new(ScenarioConfig {
            traffic_vehicles: vec![TrafficVehicle { position: Position::new(30.0, 0.0), seed: 11 }],
            global_seed: 2,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?,
    ));
    engine.lock().unwrap().start(&mut w);
    w.add_step_hook(Box::new(engine.clone()));
    for _ in 0..10 {
        w.tick();
    }
    let id = engine.lock().unwrap().traffic_agents()[0];
    let snap = w.snapshot();
    let plans = engine.lock().unwrap().plans().clone();
    let predicted = predicted_objects(&snap, w.road(), &plans, &cfg);
    let path = predicted.iter().find(|p| p.id == id).ok_or("agent has no prediction")?.path.clone();
    let mut realized_err = 0.0f64;
    let mut matched = 0;
    for _ in 0..ticks(cfg.prediction_horizon) {
        let snap = w.tick();
        if let Some(point) = path.iter().find(|p| (p.stamp - snap.sim_time).abs() < 1e-9) {
            let a = snap.actor(id).ok_or("agent vanished")?;
            realized_err = realized_err.max((a.pose.position - point.pose.position).norm());
            matched += 1;
        }
    }
    ensure!(matched + 1 >= path.len(), "only {matched} of {} waypoints reached", path.len());
    ensure!(realized_err <= 1e-9, "agent deviates {realized_err:e} m from its prediction");
    Ok(format!(
        "1000 snapshots matched, span {:.2}..{:.2} s, waypoint offset <= {worst_offset:.1e} m, agent path realized to {realized_err:.1e} m",
        span_range.0, span_range.1
    ))
}

// ---------------------------------------------------------------- A8

fn a8() -> Verdicts {
    let mut server =
        ServerConfig::new(common::block_loop(), common::configs().join("sensor_types_desk.yaml"), common::configs().join("sensor_mounts.yaml"));
    server.mode = TickMode::SyncFast;
    server.seed = 11;
    let cfg = ExperimentConfig {
        server,
        scenarios: ["empty", "traffic", "dense"].iter().map(|s| common::scenario(s)).collect(),
        laps: 3,
        sensors: false,
        log_dir: None,
    };
    let first = run_track_experiment(&cfg).map_err(|e| e.to_string())?;
    let second = run_track_experiment(&cfg).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for (a, b) in first.runs.iter().zip(&second.runs) {
        ensure!(a.trajectory_log() == b.trajectory_log(), "{}: trajectory logs differ between runs", a.scenario);
        ensure!(a.laps >= 3.0, "{}: only {:.2} laps", a.scenario, a.laps);
        ensure!(a.max_cross_track.is_finite() && a.mean_cross_track.is_finite(), "{}: no cross-track stats", a.scenario);
        notes.push(format!(
            "{} {} ticks xte max {:.3}/mean {:.3} m, {} overruns, {} actors",
            a.scenario, a.ticks, a.max_cross_track, a.mean_cross_track, a.overruns, a.max_actors
        ));
    }
    let actors: Vec<usize> = first.runs.iter().map(|r| r.max_actors).collect();
    ensure!(actors.windows(2).all(|w| w[0] < w[1]), "scenario density not increasing: {actors:?}");
    ensure!(first.deviations.len() == 2, "missing deviation stats");
    Ok(format!("bit-identical repeats; {}", notes.join("; ")))
}

// ---------------------------------------------------------------- live runs

/// Records every arrival on `names` for `window` of wall time.
fn collect_for(bus: &hil_transport::Bus, names: &[&str], window: Duration) -> Vec<TopicLog> {
    let start = Instant::now();
    let subs: Vec<_> = names.iter().map(|t| bus.subscribe(t, Qos::BestEffort(256)).expect("subscribe")).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = names
            .iter()
            .zip(subs)
            .map(|(topic, sub)| {
                scope.spawn(move || {
                    let mut log = TopicLog { topic: topic.to_string(), arrivals: Vec::new(), drops: 0, resolution: None };
                    while let Some(left) = window.checked_sub(start.elapsed()) {
                        if let Ok(Some(env)) = sub.recv_timeout(left) {
                            let wall = start.elapsed().as_secs_f64();
                            log.arrivals.push(Arrival { wall, stamp: env.stamp, bytes: env.payload.len() });
                        }
                    }
                    log.drops = sub.drops();
                    log
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("collector")).collect()
    })
}

fn desk_server_config() -> ServerConfig {
    let mut cfg =
        ServerConfig::new(common::block_loop(), common::configs().join("sensor_types_desk.yaml"), common::configs().join("sensor_mounts.yaml"));
    cfg.mode = TickMode::SyncRealtime;
    cfg.dt = 0.05;
    cfg.scenario = Some(common::scenario("traffic"));
    cfg
}

fn reference_table() -> ReferenceTable {
    ReferenceTable::load(&common::configs().join("reference/configured.json")).expect("reference table")
}

fn wait_for_topics(bus: &hil_transport::Bus, names: &[String], timeout: Duration) -> Result<(), String> {
    for name in names {
        let sub = bus.subscribe(name, Qos::BestEffort(1)).map_err(|e| e.to_string())?;
        sub.recv_timeout(timeout).map_err(|e| e.to_string())?.ok_or(format!("{name} never published"))?;
    }
    Ok(())
}

/// One desk-kit run in SyncRealtime with every service up. A2 measures the
/// sensor topics; A1 judges the tick loop over the first 60 s of that
/// measurement.
fn a1_a2(quick: bool) -> (Verdicts, Verdicts) {
    let table = reference_table();
    let names: Vec<String> = table.entries.iter().map(|e| e.topic.clone()).collect();
    let (short, long) = if quick { (200, 400) } else { (4000, 8000) };
    let a1_ticks = if quick { 200 } else { 1200 };

    let server = match HilServer::start(desk_server_config()) {
        Ok(s) => s,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let mut host = ServiceHost::new(server.control_url(), Some(server.bus().clone()), ServiceOptions::default());
    if let Err(e) = host.start_all() {
        return (Err(e.to_string()), Err(e.to_string()));
    }
    if let Err(e) = wait_for_topics(server.bus(), &names, Duration::from_secs(30)) {
        return (Err(e.clone()), Err(e));
    }
    std::thread::sleep(Duration::from_secs(2));
    let first_tick = server.latest_snapshot().map_or(0, |s| s.tick_index) as usize;
    let logs = hil::harness::collect(&hil_transport::BusHandle::Local(server.bus().clone()), &names, long, Duration::from_secs(10));
    host.stop_all();
    let tick_report = server.stop();

    let a1 = (|| {
        let steps = tick_report.wall_steps.get(first_tick..first_tick + a1_ticks).ok_or(format!(
            "only {} ticks recorded after tick {first_tick}",
            tick_report.wall_steps.len()
        ))?;
        let dev: Vec<f64> = steps.iter().map(|s| (s - 0.05).abs() * 1e3).collect();
        let mean = dev.iter().sum::<f64>() / dev.len() as f64;
        let p99 = percentile(&dev, 99.0);
        let wall: f64 = steps.iter().sum();
        let ratio = a1_ticks as f64 * 0.05 / wall;
        let detail = format!(
            "{:.0} s window: mean |step-dt| {mean:.3} ms, p99 {p99:.3} ms, sim/wall {ratio:.5}, {} overruns in run",
            a1_ticks as f64 * 0.05,
            tick_report.overruns.len()
        );
        ensure!(mean <= 1.0 && p99 <= 5.0 && (0.99..=1.01).contains(&ratio), "{detail}");
        Ok(detail)
    })();

    let a2 = (|| {
        let logs: Vec<TopicLog> = logs.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        let at = |n: usize| logs.iter().map(|l| l.metrics(Some(n))).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string());
        let (short_m, long_m) = (at(short)?, at(long)?);
        for m in long_m.iter() {
            ensure!(m.sample_count == long, "{}: {} of {long} periods", m.topic, m.sample_count);
        }
        let cmp = compare_report(&short_m, &table);
        let failed: Vec<String> = cmp
            .rows
            .iter()
            .filter(|r| r.verdict != Verdict::Pass)
            .map(|r| format!("{} {:?} ({:?} ms)", r.topic, r.verdict, r.measured_ms))
            .collect();
        ensure!(failed.is_empty(), "{}", failed.join(", "));
        let mut worst_shift = 0.0f64;
        for (s, l) in short_m.iter().zip(&long_m) {
            let shift = (l.mean_period_ms - s.mean_period_ms).abs() / s.mean_period_ms * 100.0;
            ensure!(shift < 1.0, "{}: mean moved {shift:.3}% from {short} to {long} samples", s.topic);
            worst_shift = worst_shift.max(shift);
        }
        let periods: Vec<String> = short_m
            .iter()
            .map(|m| format!("{}={:.2}", m.topic.rsplit('/').nth(1).unwrap_or(&m.topic), m.mean_period_ms))
            .collect();
        Ok(format!("{short} samples: {} ms; max shift at {long} {worst_shift:.3}%", periods.join(" ")))
    })();
    (a1, a2)
}

fn service_topics(kind: ServiceKind, table: &ReferenceTable) -> Vec<(String, f64)> {
    match kind {
        ServiceKind::SensorInterface => table.entries.iter().map(|e| (e.topic.clone(), e.period_ms)).collect(),
        ServiceKind::VehicleInterface => [topics::STEERING_STATUS, topics::GEAR_STATUS, topics::VELOCITY_STATUS]
            .iter()
            .map(|t| (t.to_string(), 20.0))
            .collect(),
        ServiceKind::Groundtruth => [topics::DETECTED_OBJECTS, topics::TRACKED_OBJECTS, topics::PREDICTED_OBJECTS]
            .iter()
            .map(|t| (t.to_string(), 50.0))
            .collect(),
        // Latched one-shot publishers: no cadence to hold.
        ServiceKind::ScenarioConfigurator | ServiceKind::Map => Vec::new(),
    }
}

fn a9(quick: bool) -> Verdicts {
    let table = reference_table();
    let (kill_at, restart_at, window) = if quick { (1.0, 3.0, 6.0) } else { (3.0, 8.0, 20.0) };
    let server = HilServer::start(desk_server_config()).map_err(|e| e.to_string())?;
    let host = Arc::new(Mutex::new(ServiceHost::new(server.control_url(), Some(server.bus().clone()), ServiceOptions::default())));
    host.lock().unwrap().start_all().map_err(|e| e.to_string())?;
    let all: Vec<String> = ServiceKind::ALL.iter().flat_map(|k| service_topics(*k, &table)).map(|(t, _)| t).collect();
    wait_for_topics(server.bus(), &all, Duration::from_secs(30))?;
    std::thread::sleep(Duration::from_secs(2));

    let mut notes = Vec::new();
    for victim in ServiceKind::ALL {
        let watched: Vec<(String, f64)> =
            ServiceKind::ALL.iter().filter(|&&k| k != victim).flat_map(|k| service_topics(*k, &table)).collect();
        let names: Vec<&str> = watched.iter().map(|(t, _)| t.as_str()).collect();
        let chaos = {
            let host = host.clone();
            std::thread::spawn(move || -> Result<(), String> {
                std::thread::sleep(Duration::from_secs_f64(kill_at));
                host.lock().unwrap().kill(victim).map_err(|e| e.to_string())?;
                std::thread::sleep(Duration::from_secs_f64(restart_at - kill_at));
                host.lock().unwrap().restart(victim).map_err(|e| e.to_string())
            })
        };
        let logs = collect_for(server.bus(), &names, Duration::from_secs_f64(window));
        chaos.join().map_err(|_| "kill/restart thread panicked")??;
        let mut worst = 0.0f64;
        for (log, (topic, period)) in logs.iter().zip(&watched) {
            let m = log.metrics(None).map_err(|e| format!("{victim} down: {e}"))?;
            let dev = (m.mean_period_ms - period) / period * 100.0;
            ensure!(dev.abs() <= 10.0, "{victim} down: {topic} period {:.2} ms ({dev:+.1}%)", m.mean_period_ms);
            worst = worst.max(dev.abs());
        }
        ensure!(host.lock().unwrap().status(victim) == ServiceStatus::Running, "{victim} not running after restart");
        let own: Vec<String> = service_topics(victim, &table).into_iter().map(|(t, _)| t).collect();
        wait_for_topics(server.bus(), &own, Duration::from_secs(30)).map_err(|e| format!("{victim} after restart: {e}"))?;
        notes.push(format!("{victim} ({} topics, worst {worst:.1}%)", watched.len()));
    }
    host.lock().unwrap().stop_all();
    server.stop();
    Ok(notes.join(", "))
}

fn main() {
    let quick = std::env::var("HIL_ACCEPTANCE_QUICK").is_ok_and(|v| !v.is_empty() && v != "0");
    let live_tag = if quick { " (quick)" } else { "" };
    let mut failed = Vec::new();
    let mut record = |id: &'static str, tag: &str, started: Instant, outcome: Verdicts| {
        report(id, tag, started, &outcome);
        if outcome.is_err() {
            failed.push(id);
        }
    };

    for (id, f) in [("A3", a3 as fn() -> Verdicts), ("A5", a5), ("A6", a6), ("A7", a7), ("A8", a8)] {
        let t = Instant::now();
        record(id, "", t, guarded(f));
    }
    let t = Instant::now();
    let offline = guarded(a4_offline);
    let a4 = offline.and_then(|a| guarded(|| a4_status(quick)).map(|b| format!("{a}; {b}")));
    record("A4", live_tag, t, a4);

    let t = Instant::now();
    let (a1, a2) = std::panic::catch_unwind(AssertUnwindSafe(|| a1_a2(quick)))
        .unwrap_or_else(|_| (Err("live run panicked".into()), Err("live run panicked".into())));
    record("A1", live_tag, t, a1);
    record("A2", live_tag, t, a2);

    let t = Instant::now();
    record("A9", live_tag, t, guarded(|| a9(quick)));

    if failed.is_empty() {
        println!("acceptance: all criteria passed{live_tag}");
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
