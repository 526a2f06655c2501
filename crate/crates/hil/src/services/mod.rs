//! Plugin services. Each one registers on the control channel, keeps a
//! heartbeat going and talks to the simulator only through the bus.
//!
//! [`ServiceHost`] runs services on threads so they can be started, killed,
//! crashed and restarted independently of each other.

mod groundtruth;
mod map;
mod scenario;
mod sensors;
mod vehicle;

use crate::topics;
use hil_core::frame::decode_frame;
use hil_core::groundtruth::{AgentPlans, GroundTruthConfig};
use hil_core::{RoadNetwork, Snapshot};
use hil_transport::control::{ControlRequest, HEARTBEAT_INTERVAL};
use hil_transport::{Bus, BusError, BusHandle, ControlClient, ControlError, Qos, RemoteBus, SessionInfo, Subscription};
use serde_json::Value;
use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;
use thiserror::Error;

/// Receive timeout used by every service loop between stop-flag checks.
pub const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServiceKind {
    VehicleInterface,
    SensorInterface,
    ScenarioConfigurator,
    Groundtruth,
    Map,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 5] = [
        ServiceKind::VehicleInterface,
        ServiceKind::SensorInterface,
        ServiceKind::ScenarioConfigurator,
        ServiceKind::Groundtruth,
        ServiceKind::Map,
    ];

    /// Name the service registers under.
    pub fn registration_name(self) -> &'static str {
        match self {
            ServiceKind::VehicleInterface => "vehicle_interface_service",
            ServiceKind::SensorInterface => "sensor_interface_service",
            ServiceKind::ScenarioConfigurator => "scenario_configurator_service",
            ServiceKind::Groundtruth => "groundtruth_publisher_service",
            ServiceKind::Map => "map_service",
        }
    }

    /// Accepts the registration name or its short form without `_service`.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.registration_name() == name || k.registration_name().strip_suffix("_service") == Some(name))
    }
}

impl std::fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.registration_name())
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("control channel: {0}")]
    Control(#[from] ControlError),
    #[error("bus: {0}")]
    Bus(#[from] BusError),
    #[error("{0}")]
    Config(String),
    #[error("map output: {0}")]
    Map(#[from] crate::pcmap::PcMapError),
    #[error("service panicked: {0}")]
    Panicked(String),
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// Where the map service writes the point-cloud map, if anywhere.
    pub map_out: Option<PathBuf>,
    pub grid_step: f64,
    /// Niceness applied to camera and lidar threads so rendering yields to
    /// the tick loop on small machines.
    pub heavy_sensor_nice: i32,
    pub sensor_seed: u64,
    pub groundtruth: GroundTruthConfig,
    pub heartbeat: Duration,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            map_out: None,
            grid_step: 0.5,
            heavy_sensor_nice: 10,
            sensor_seed: 0,
            groundtruth: GroundTruthConfig::default(),
            heartbeat: HEARTBEAT_INTERVAL,
        }
    }
}

/// Everything a running service needs: its control connection, the session
/// it was handed and a bus handle.
pub struct ServiceContext {
    pub kind: ServiceKind,
    pub control: ControlClient,
    pub session: SessionInfo,
    pub bus: BusHandle,
    pub options: ServiceOptions,
    stop: Arc<AtomicBool>,
    fault: Arc<AtomicBool>,
}

impl ServiceContext {
    /// Registers `kind` at `control_url` and connects to the bus the session
    /// names, unless an in-process bus is supplied.
    pub fn connect(
        kind: ServiceKind,
        control_url: &str,
        local_bus: Option<Bus>,
        options: ServiceOptions,
    ) -> Result<Self, ServiceError> {
        let (control, session) = ControlClient::register(control_url, kind.registration_name())?;
        let bus = match local_bus {
            Some(bus) => BusHandle::Local(bus),
            None => BusHandle::Remote(RemoteBus::connect(session.sim_address.as_str())?),
        };
        Ok(Self {
            kind,
            control,
            session,
            bus,
            options,
            stop: Arc::new(AtomicBool::new(false)),
            fault: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// True once the service should wind down. Panics if a fault was injected,
    /// which is how crashes are simulated.
    pub fn should_stop(&self) -> bool {
        if self.fault.load(Ordering::Acquire) {
            panic!("fault injected into {}", self.kind);
        }
        self.stop.load(Ordering::Acquire) || self.control.is_closed()
    }

    pub fn get_state(&self) -> Result<Value, ServiceError> {
        Ok(self.control.request(&ControlRequest::GetState)?)
    }

    /// Blocks for the latched road network.
    pub fn road_network(&self) -> Result<Option<RoadNetwork>, ServiceError> {
        let sub = self.bus.subscribe(topics::ROAD_NETWORK, Qos::Reliable(1))?;
        let Some(env) = self.wait(&sub)? else { return Ok(None) };
        let text = std::str::from_utf8(&env.payload).map_err(|e| ServiceError::Config(e.to_string()))?;
        RoadNetwork::from_json(text).map(Some).map_err(|e| ServiceError::Config(format!("road network: {e}")))
    }

    /// Waits for the next message on `sub`, returning `None` on stop.
    pub fn wait(&self, sub: &Subscription) -> Result<Option<hil_transport::Envelope>, ServiceError> {
        loop {
            if self.should_stop() {
                return Ok(None);
            }
            if let Some(env) = sub.recv_timeout(POLL)? {
                return Ok(Some(env));
            }
        }
    }

    /// Waits for the next decodable frame on `sub`.
    pub fn next_frame(&self, sub: &Subscription) -> Result<Option<(Snapshot, AgentPlans)>, ServiceError> {
        while let Some(env) = self.wait(sub)? {
            match decode_frame(&env.payload) {
                Ok(frame) => return Ok(Some(frame)),
                Err(e) => log::warn!("{}: bad frame: {e}", self.kind),
            }
        }
        Ok(None)
    }
}

/// Runs `ctx.kind` until stopped or failed. Heartbeats run for the duration.
pub fn run_service(ctx: &ServiceContext) -> Result<(), ServiceError> {
    let _beat = ctx.control.spawn_heartbeat(ctx.options.heartbeat);
    match ctx.kind {
        ServiceKind::VehicleInterface => vehicle::run(ctx),
        ServiceKind::SensorInterface => sensors::run(ctx),
        ServiceKind::ScenarioConfigurator => scenario::run(ctx),
        ServiceKind::Groundtruth => groundtruth::run(ctx),
        ServiceKind::Map => map::run(ctx),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceStatus {
    NotStarted,
    Running,
    Exited,
    Failed(String),
}

#[derive(Debug, Error)]
pub enum HostError {
    #[error("{0} is already running")]
    AlreadyRunning(ServiceKind),
    #[error("{0} is not running")]
    NotRunning(ServiceKind),
    #[error("starting {kind}: {source}")]
    Start { kind: ServiceKind, source: ServiceError },
}

struct Running {
    stop: Arc<AtomicBool>,
    fault: Arc<AtomicBool>,
    thread: JoinHandle<Result<(), ServiceError>>,
}

/// Runs services on their own threads against one server.
pub struct ServiceHost {
    control_url: String,
    local_bus: Option<Bus>,
    options: ServiceOptions,
    running: BTreeMap<ServiceKind, Running>,
    finished: BTreeMap<ServiceKind, ServiceStatus>,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

impl ServiceHost {
    /// Services connect to the bus named in their session unless
    /// `local_bus` is given.
    pub fn new(control_url: impl Into<String>, local_bus: Option<Bus>, options: ServiceOptions) -> Self {
        Self { control_url: control_url.into(), local_bus, options, running: BTreeMap::new(), finished: BTreeMap::new() }
    }

    /// Registers the service and starts its thread. Registration errors are
    /// reported here rather than from the thread.
    pub fn start(&mut self, kind: ServiceKind) -> Result<(), HostError> {
        self.reap();
        if self.running.contains_key(&kind) {
            return Err(HostError::AlreadyRunning(kind));
        }
        let ctx = ServiceContext::connect(kind, &self.control_url, self.local_bus.clone(), self.options.clone())
            .map_err(|source| HostError::Start { kind, source })?;
        let (stop, fault) = (ctx.stop.clone(), ctx.fault.clone());
        let thread = std::thread::Builder::new()
            .name(kind.registration_name().into())
            .spawn(move || {
                std::panic::catch_unwind(AssertUnwindSafe(|| run_service(&ctx)))
                    .unwrap_or_else(|p| Err(ServiceError::Panicked(panic_message(p))))
            })
            .expect("spawn service thread");
        self.finished.remove(&kind);
        self.running.insert(kind, Running { stop, fault, thread });
        Ok(())
    }

    pub fn start_all(&mut self) -> Result<(), HostError> {
        ServiceKind::ALL.into_iter().try_for_each(|k| self.start(k))
    }

    /// Stops the service without deregistering; the server notices the
    /// dropped connection.
    pub fn kill(&mut self, kind: ServiceKind) -> Result<ServiceStatus, HostError> {
        let running = self.running.remove(&kind).ok_or(HostError::NotRunning(kind))?;
        running.stop.store(true, Ordering::Release);
        let status = Self::join(running.thread);
        self.finished.insert(kind, status.clone());
        Ok(status)
    }

    /// Makes the service panic at its next loop iteration and waits for it
    /// to die.
    pub fn inject_fault(&mut self, kind: ServiceKind) -> Result<ServiceStatus, HostError> {
        let running = self.running.remove(&kind).ok_or(HostError::NotRunning(kind))?;
        running.fault.store(true, Ordering::Release);
        let status = Self::join(running.thread);
        self.finished.insert(kind, status.clone());
        Ok(status)
    }

    pub fn restart(&mut self, kind: ServiceKind) -> Result<(), HostError> {
        self.reap();
        if self.running.contains_key(&kind) {
            self.kill(kind)?;
        }
        self.start(kind)
    }

    pub fn status(&mut self, kind: ServiceKind) -> ServiceStatus {
        self.reap();
        if self.running.contains_key(&kind) {
            return ServiceStatus::Running;
        }
        self.finished.get(&kind).cloned().unwrap_or(ServiceStatus::NotStarted)
    }

    pub fn stop_all(&mut self) {
        let kinds: Vec<_> = self.running.keys().copied().collect();
        for kind in kinds {
            let _ = self.kill(kind);
        }
    }

    fn join(thread: JoinHandle<Result<(), ServiceError>>) -> ServiceStatus {
        match thread.join() {
            Ok(Ok(())) => ServiceStatus::Exited,
            Ok(Err(e)) => ServiceStatus::Failed(e.to_string()),
            Err(p) => ServiceStatus::Failed(panic_message(p)),
        }
    }

    /// Moves services whose thread ended on its own to `finished`.
    fn reap(&mut self) {
        let done: Vec<_> = self.running.iter().filter(|(_, r)| r.thread.is_finished()).map(|(k, _)| *k).collect();
        for kind in done {
            let running = self.running.remove(&kind).expect("listed above");
            let status = Self::join(running.thread);
            if let ServiceStatus::Failed(reason) = &status {
                log::warn!("{kind} failed: {reason}");
            }
            self.finished.insert(kind, status);
        }
    }
}

impl Drop for ServiceHost {
    fn drop(&mut self) {
        self.stop_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for kind in ServiceKind::ALL {
            assert_eq!(ServiceKind::from_name(kind.registration_name()), Some(kind));
        }
        assert_eq!(ServiceKind::from_name("map"), Some(ServiceKind::Map));
        assert_eq!(ServiceKind::from_name("groundtruth_publisher"), Some(ServiceKind::Groundtruth));
        assert_eq!(ServiceKind::from_name("bogus"), None);
    }
}
