//! The HiL server: owns the world, runs the tick loop, exposes the bus over
//! TCP and hands out sessions on the control channel.

use crate::config::{mode_name, ServerConfig, ServerError};
use crate::sim::Sim;
use crate::topics;
use hil_core::actuation::{ControlCommand, ControlMailbox, StatusCell};
use hil_core::frame::encode_frame;
use hil_core::scenario::{ScenarioEdit, ScenarioEngine, ScenarioError, VEHICLE_EXTENT};
use hil_core::sensors::{EnableMap, SensorKind};
use hil_core::sync::{decode_batch, encode_batch, RefState, SyncReceiver, SyncSender, DEFAULT_SYNC_PERIOD, SYNC_CAPACITY};
use hil_core::world::{Overrun, StepHook, WorldMailbox};
use hil_core::{Actor, ActorId, ActorKind, ManagedBy, Snapshot, TickMode, Vec3, World};
use hil_transport::control::{ControlConfig, ControlFailure, ControlHandler, ControlRequest, ErrorCode};
use hil_transport::{Bus, BusServer, ControlClient, ControlServer, Qos, RemoteBus, SessionInfo};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

const EDIT_TIMEOUT: Duration = Duration::from_secs(5);

/// Tick loop statistics collected when the server stops.
#[derive(Debug, Clone, Default)]
pub struct TickReport {
    pub ticks: u64,
    pub sim_time: f64,
    /// Wall time from the first tick to the last, seconds.
    pub wall_time: f64,
    /// Wall time between consecutive tick returns, seconds.
    pub wall_steps: Vec<f64>,
    pub overruns: Vec<Overrun>,
}

struct Shared {
    session: SessionInfo,
    bus: Bus,
    mounts: BTreeMap<String, String>,
    enable: EnableMap,
    enable_pub: hil_transport::Publisher,
    world_mailbox: WorldMailbox,
    scenario: Arc<Mutex<ScenarioEngine>>,
    scenario_revision: AtomicU64,
    sync_ids: Mutex<Option<Vec<ActorId>>>,
    status: StatusCell,
    latest: Mutex<Option<Snapshot>>,
    types_text: String,
    mounts_text: String,
    /// Directory relative scan pattern paths in the types file resolve against.
    types_dir: Option<String>,
}

impl Shared {
    fn publish_enable_state(&self) {
        let states = serde_json::to_vec(&self.enable.states()).expect("enable map serializes");
        if let Err(e) = self.enable_pub.publish(0.0, states) {
            log::warn!("enable state not published: {e}");
        }
    }

    fn sensor_rows(&self) -> Vec<Value> {
        let states = self.enable.states();
        self.mounts
            .iter()
            .map(|(name, kind)| json!({"mount": name, "kind": kind, "enabled": states.get(name).copied().unwrap_or(false)}))
            .collect()
    }

    fn scenario_edit(&self, edit: ScenarioEdit) -> Result<Value, ControlFailure> {
        let (tx, rx) = mpsc::channel();
        let engine = self.scenario.clone();
        self.world_mailbox.post_after_step(move |world: &mut World| {
            let mut engine = engine.lock().unwrap_or_else(|e| e.into_inner());
            let result = engine.apply_edit(world, edit).map(|spawned| (spawned, engine.config().clone()));
            let _ = tx.send(result);
        });
        match rx.recv_timeout(EDIT_TIMEOUT) {
            Ok(Ok((spawned, config))) => {
                self.scenario_revision.fetch_add(1, Ordering::SeqCst);
                Ok(json!({"spawned": spawned.map(|id| id.0), "scenario": config}))
            }
            Ok(Err(ScenarioError::SpawnBlocked(id))) => {
                Err(ControlFailure::new(ErrorCode::SpawnBlocked, format!("spawn blocked by actor {id}")))
            }
            Ok(Err(e)) => Err(ControlFailure::new(ErrorCode::InvalidEdit, e.to_string())),
            Err(_) => Err(ControlFailure::new(ErrorCode::Internal, "world did not apply the edit in time")),
        }
    }

    fn sync_register(&self, ids: &[u64]) -> Result<Value, ControlFailure> {
        if ids.len() > SYNC_CAPACITY {
            return Err(ControlFailure::new(
                ErrorCode::CapacityExceeded,
                format!("{} actors requested, at most {SYNC_CAPACITY} can be synchronized", ids.len()),
            ));
        }
        let latest = self.latest.lock().unwrap().clone();
        if let Some(snapshot) = latest {
            if let Some(missing) = ids.iter().find(|&&id| snapshot.actor(ActorId(id)).is_none()) {
                return Err(ControlFailure::new(ErrorCode::UnknownActor, format!("no actor {missing}")));
            }
        }
        *self.sync_ids.lock().unwrap() = Some(ids.iter().map(|&id| ActorId(id)).collect());
        Ok(json!({"ids": ids}))
    }
}

struct Handler(Arc<Shared>);

impl ControlHandler for Handler {
    fn session(&self) -> SessionInfo {
        self.0.session.clone()
    }

    fn handle(&self, request: &ControlRequest) -> Result<Value, ControlFailure> {
        let s = &self.0;
        match request {
            ControlRequest::GetState => {
                let scenario = s.scenario.lock().unwrap_or_else(|e| e.into_inner()).config().clone();
                let sync_ids = s.sync_ids.lock().unwrap().clone().unwrap_or_default();
                Ok(json!({
                    "session": s.session,
                    "sensors": s.sensor_rows(),
                    "scenario": scenario,
                    "sync_ids": sync_ids,
                    "sensor_config": {"types": s.types_text, "mounts": s.mounts_text, "base_dir": s.types_dir},
                }))
            }
            ControlRequest::SetSensorEnabled { mount, enabled } => {
                s.enable
                    .set(mount, *enabled)
                    .map_err(|_| ControlFailure::new(ErrorCode::UnknownMount, format!("no sensor mount {mount}")))?;
                s.publish_enable_state();
                Ok(json!({"mount": mount, "enabled": enabled}))
            }
            ControlRequest::ScenarioEdit(map) => {
                let edit: ScenarioEdit = serde_json::from_value(Value::Object(map.clone()))
                    .map_err(|e| ControlFailure::new(ErrorCode::InvalidEdit, e.to_string()))?;
                s.scenario_edit(edit)
            }
            ControlRequest::SyncRegister { ids } => s.sync_register(ids),
            other => Err(ControlFailure::new(ErrorCode::Unsupported, format!("{} is not handled here", other.op()))),
        }
    }

    fn debug_sample(&self) -> Option<Value> {
        let report = self.0.status.latest().ok()?;
        let commanded = report.raw_command.map(|c| json!({"steer": c.target_steer, "accel": c.target_accel}));
        let actors: Vec<Value> = self
            .0
            .latest
            .lock()
            .unwrap()
            .as_ref()
            .map(|snap| {
                snap.actors()
                    .iter()
                    .map(|a| json!({"id": a.id.0, "kind": a.kind, "x": a.pose.position.x, "y": a.pose.position.y, "yaw": a.pose.yaw}))
                    .collect()
            })
            .unwrap_or_default();
        Some(json!({
            "stamp": report.status.stamp,
            "commanded": commanded,
            "executed": {"steer": report.executed_command.target_steer, "accel": report.applied_accel},
            "speed": report.status.longitudinal_velocity,
            "gear": report.status.gear,
            "rejected_commands": report.rejected_commands,
            "actors": actors,
        }))
    }
}

pub struct HilServer {
    shared: Arc<Shared>,
    bus_server: BusServer,
    control: ControlServer,
    stop: Arc<AtomicBool>,
    tick: Option<JoinHandle<TickReport>>,
    command_relay: Option<JoinHandle<()>>,
    secondary: Option<Secondary>,
}

impl HilServer {
    pub fn start(cfg: ServerConfig) -> Result<Self, ServerError> {
        let sim = Sim::build(&cfg)?;
        Self::start_with(cfg, sim)
    }

    /// Starts around an already assembled simulation.
    pub fn start_with(cfg: ServerConfig, sim: Sim) -> Result<Self, ServerError> {
        let bus = Bus::new();
        let bus_server = BusServer::bind(bus.clone(), cfg.bus_listen.as_str()).map_err(|e| ServerError::Bind {
            what: "the bus",
            addr: cfg.bus_listen.clone(),
            reason: e.to_string(),
        })?;
        let read = |p: &std::path::Path| std::fs::read_to_string(p).map_err(|e| ServerError::Sensors(format!("{}: {e}", p.display())));
        let types_text = read(&cfg.sensor_types)?;
        let mounts_text = read(&cfg.sensor_mounts)?;

        let Sim { mut world, road, specs, scenario, mailbox, status, ego } = sim;
        let enable = EnableMap::new(specs.iter().map(|s| (s.mount.name.clone(), s.mount.enabled)));
        let mounts = specs.iter().map(|s| (s.mount.name.clone(), kind_name(s.def.kind).to_string())).collect();
        let enable_pub = bus.advertise(topics::latched(topics::SENSOR_ENABLE)).expect("fresh bus");

        let mut secondary = None;
        let mut ego_id = ego;
        if let Some(primary) = &cfg.sync_primary {
            let link = Secondary::connect(primary, &mut world)?;
            ego_id = Some(link.primary_ego);
            secondary = Some(link);
        }

        let session = SessionInfo {
            sim_address: bus_server.local_addr().to_string(),
            ego_actor_id: ego_id.map_or(0, |id| id.0),
            dt: cfg.dt,
            mode: mode_name(cfg.mode).to_string(),
            map_name: road.name.clone().unwrap_or_else(|| {
                cfg.map.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            }),
        };
        let shared = Arc::new(Shared {
            session,
            bus: bus.clone(),
            mounts,
            enable,
            enable_pub,
            world_mailbox: world.mailbox(),
            scenario,
            scenario_revision: AtomicU64::new(1),
            sync_ids: Mutex::new(None),
            status,
            latest: Mutex::new(None),
            types_text,
            mounts_text,
            types_dir: cfg.sensor_types.parent().map(|p| p.to_string_lossy().into_owned()),
        });
        shared.publish_enable_state();
        let road_pub = bus.advertise(topics::latched(topics::ROAD_NETWORK)).expect("fresh bus");
        road_pub.publish(0.0, road.to_json()).expect("latched publish");

        let control = ControlServer::bind(cfg.control_listen.as_str(), Arc::new(Handler(shared.clone())), ControlConfig::default())
            .map_err(|e| ServerError::Bind { what: "the control channel", addr: cfg.control_listen.clone(), reason: e.to_string() })?;

        let command_relay = Some(spawn_command_relay(&bus, mailbox));
        let stop = Arc::new(AtomicBool::new(false));
        let tick = {
            let shared = shared.clone();
            let stop = stop.clone();
            let mode = cfg.mode;
            std::thread::Builder::new()
                .name("tick".into())
                .spawn(move || run_tick_loop(world, mode, shared, stop))
                .expect("spawn tick thread")
        };
        log::info!(
            "server up: bus {}, control {}, ego {:?}, dt {}, mode {}",
            bus_server.local_addr(),
            control.url(),
            ego_id,
            cfg.dt,
            mode_name(cfg.mode)
        );
        Ok(Self { shared, bus_server, control, stop, tick: Some(tick), command_relay, secondary })
    }

    pub fn session(&self) -> &SessionInfo {
        &self.shared.session
    }

    /// In-process handle on the server's bus.
    pub fn bus(&self) -> &Bus {
        &self.shared.bus
    }

    pub fn bus_addr(&self) -> SocketAddr {
        self.bus_server.local_addr()
    }

    pub fn control_url(&self) -> String {
        self.control.url()
    }

    pub fn control(&self) -> &ControlServer {
        &self.control
    }

    pub fn scenario(&self) -> Arc<Mutex<ScenarioEngine>> {
        self.shared.scenario.clone()
    }

    pub fn world_mailbox(&self) -> WorldMailbox {
        self.shared.world_mailbox.clone()
    }

    pub fn latest_snapshot(&self) -> Option<Snapshot> {
        self.shared.latest.lock().unwrap().clone()
    }

    /// Stops the tick loop and every listener, returning the tick statistics.
    pub fn stop(mut self) -> TickReport {
        self.shutdown()
    }

    fn shutdown(&mut self) -> TickReport {
        self.stop.store(true, Ordering::SeqCst);
        let report = self.tick.take().map(|h| h.join().unwrap_or_default()).unwrap_or_default();
        if let Some(s) = self.secondary.take() {
            s.close();
        }
        self.control.shutdown();
        self.bus_server.shutdown();
        self.shared.bus.close();
        if let Some(h) = self.command_relay.take() {
            let _ = h.join();
        }
        report
    }
}

impl Drop for HilServer {
    fn drop(&mut self) {
        if self.tick.is_some() {
            self.shutdown();
        }
    }
}

fn kind_name(kind: SensorKind) -> &'static str {
    match kind {
        SensorKind::Lidar => "lidar",
        SensorKind::Camera => "camera",
        SensorKind::Gnss => "gnss",
        SensorKind::Imu => "imu",
        SensorKind::Odometry => "odometry",
        SensorKind::GnssImu => "gnss_imu",
    }
}

fn spawn_command_relay(bus: &Bus, mailbox: ControlMailbox) -> JoinHandle<()> {
    let sub = bus.subscribe(topics::EGO_COMMAND, Qos::control()).expect("fresh bus");
    sub.spawn_callback(move |env| {
        match ControlCommand::decode(&env.payload) {
            Ok(cmd) => {
                if let Some(gear) = cmd.mode_hint {
                    mailbox.request_gear(gear);
                }
                if let Err(e) = mailbox.submit(cmd) {
                    log::warn!("ego command rejected: {e}");
                }
            }
            Err(e) => log::warn!("undecodable ego command: {e}"),
        }
        true
    })
}

fn run_tick_loop(mut world: World, mode: TickMode, shared: Arc<Shared>, stop: Arc<AtomicBool>) -> TickReport {
    let bus = &shared.bus;
    let clock = bus.advertise(topics::clock()).expect("clock topic");
    let frame = bus.advertise(topics::frame()).expect("frame topic");
    let report = bus.advertise(topics::vehicle_report()).expect("report topic");
    let scenario_state = bus.advertise(topics::latched(topics::SCENARIO_STATE)).expect("scenario topic");
    let refs = bus.advertise(topics::sync_ref_states()).expect("sync topic");
    let mut sender = SyncSender::new(DEFAULT_SYNC_PERIOD);
    let mut published_revision = 0;
    let mut first: Option<Instant> = None;
    let mut last: Option<Instant> = None;
    let dt = world.clock().dt;

    while !stop.load(Ordering::SeqCst) {
        let started = Instant::now();
        let snapshot = world.tick();
        let now = Instant::now();
        first.get_or_insert(now);
        last = Some(now);
        let stamp = snapshot.sim_time;
        let _ = clock.publish(stamp, stamp.to_le_bytes().to_vec());

        let (plans, revision_state) = {
            let mut engine = shared.scenario.lock().unwrap_or_else(|e| e.into_inner());
            for err in engine.take_errors() {
                log::warn!("scenario: {err}");
            }
            let revision = shared.scenario_revision.load(Ordering::SeqCst);
            let state = (revision != published_revision).then(|| {
                (revision, json!({"revision": revision, "weather_revision": engine.weather_revision(), "config": engine.config()}))
            });
            (engine.plans().clone(), state)
        };
        let _ = frame.publish(stamp, encode_frame(&snapshot, &plans));
        if let Ok(r) = shared.status.latest() {
            let _ = report.publish(stamp, serde_json::to_vec(&r).expect("report serializes"));
        }
        if let Some((revision, state)) = revision_state {
            let _ = scenario_state.publish(stamp, serde_json::to_vec(&state).expect("state serializes"));
            published_revision = revision;
        }
        if let Some(ids) = shared.sync_ids.lock().unwrap().take() {
            sender.set_ids(ids);
        }
        if !sender.ids().is_empty() {
            let mut controls = BTreeMap::new();
            if let (Some(ego), Ok(r)) = (snapshot.ego, shared.status.latest()) {
                if let Some(cmd) = r.raw_command {
                    controls.insert(ego, cmd);
                }
            }
            if let Some(batch) = sender.poll(&snapshot, &controls) {
                let _ = refs.publish(stamp, encode_batch(&batch));
            }
        }
        *shared.latest.lock().unwrap() = Some(snapshot);

        if mode == TickMode::Async {
            // Cap the async loop at the nominal rate; the world still steps
            // by the measured wall time.
            let spent = started.elapsed().as_secs_f64();
            if spent < dt {
                std::thread::sleep(Duration::from_secs_f64(dt - spent));
            }
        }
    }
    world.begin_shutdown();
    let clock = world.clock();
    TickReport {
        ticks: clock.tick_index,
        sim_time: clock.sim_time,
        wall_time: match (first, last) {
            (Some(a), Some(b)) => (b - a).as_secs_f64() + world.wall_steps().first().copied().unwrap_or(0.0),
            _ => 0.0,
        },
        wall_steps: world.take_wall_steps(),
        overruns: world.overruns().to_vec(),
    }
}

/// Receives reference states from a primary server and feeds them into the
/// local world.
struct Secondary {
    primary_ego: ActorId,
    _control: ControlClient,
    _bus: RemoteBus,
    relay: Option<JoinHandle<()>>,
}

type Inbox = Arc<Mutex<Vec<Vec<RefState>>>>;

struct ReplicaHook {
    receiver: SyncReceiver,
    inbox: Inbox,
    primary_ego: ActorId,
    /// Primary stamp minus local sim time at the first receipt.
    offset: Option<f64>,
}

impl StepHook for ReplicaHook {
    fn after_step(&mut self, world: &mut World) {
        let batches = std::mem::take(&mut *self.inbox.lock().unwrap());
        let now = world.clock().sim_time;
        for mut batch in batches {
            let offset = *self.offset.get_or_insert_with(|| batch.first().map_or(0.0, |s| s.stamp - now));
            for state in &mut batch {
                state.stamp -= offset;
                if self.receiver.sync_set().secondary_of(state.id).is_none() {
                    let kind = if state.id == self.primary_ego { ActorKind::EgoVehicle } else { ActorKind::Vehicle };
                    let actor = Actor {
                        id: state.id,
                        kind,
                        pose: state.pose,
                        velocity: state.velocity,
                        acceleration: Vec3::zeros(),
                        yaw_rate: state.yaw_rate,
                        bbox_extent: VEHICLE_EXTENT,
                        managed_by: ManagedBy::External,
                    };
                    if let Err(e) = self.receiver.register(world, &actor) {
                        log::warn!("cannot replicate actor {}: {e}", state.id);
                    }
                }
            }
            self.receiver.receive(batch, now);
        }
        self.receiver.apply(world);
    }
}

impl Secondary {
    fn connect(primary: &crate::config::SyncPrimary, world: &mut World) -> Result<Self, ServerError> {
        let name = format!("sync_secondary_{}", std::process::id() ^ (Instant::now().elapsed().subsec_nanos()));
        let (control, session) =
            ControlClient::register(&primary.control_url, &name).map_err(|e| ServerError::Sync(e.to_string()))?;
        let bus = RemoteBus::connect(primary.bus.as_str()).map_err(|e| ServerError::Sync(e.to_string()))?;
        let sub = bus
            .subscribe(topics::SYNC_REF_STATES, Qos::control())
            .map_err(|e| ServerError::Sync(e.to_string()))?;
        let primary_ego = ActorId(session.ego_actor_id);
        let inbox: Inbox = Arc::default();
        world.add_step_hook(Box::new(ReplicaHook {
            receiver: SyncReceiver::new(SYNC_CAPACITY, DEFAULT_SYNC_PERIOD),
            inbox: inbox.clone(),
            primary_ego,
            offset: None,
        }));
        let relay = sub.spawn_callback(move |env| {
            match decode_batch(&env.payload) {
                Ok(batch) => inbox.lock().unwrap().push(batch),
                Err(e) => log::warn!("bad reference batch: {e}"),
            }
            true
        });
        Ok(Self { primary_ego, _control: control, _bus: bus, relay: Some(relay) })
    }

    fn close(mut self) {
        drop(self._bus);
        if let Some(h) = self.relay.take() {
            let _ = h.join();
        }
    }
}
