//! JSON-over-WebSocket control channel.
//!
//! Every message is a JSON object with `"v":1` and an `"op"` string. Clients
//! may omit `v`; any other version is refused. Client requests:
//!
//! | op | fields | reply |
//! |----|--------|-------|
//! | `register` | `name` | `session` |
//! | `heartbeat` | | `ack` |
//! | `deregister` | | `ack` |
//! | `list_plugins` | | `ack`, `result` = descriptors |
//! | `get_state` | | `ack`, `result` from the server |
//! | `set_sensor_enabled` | `mount`, `enabled` | `ack` |
//! | `scenario_edit` | one edit key, e.g. `"add_source":{...}` | `ack` |
//! | `debug_stream_subscribe` | | `ack`, then `debug` pushes |
//! | `sync_register` | `ids` | `ack` |
//!
//! Server messages: `session` (SessionInfo fields), `ack` (`request`,
//! `result`), `error` (`code`, `message`) and the unsolicited `debug`
//! (`data`). A plugin that registers must send a heartbeat at least every
//! two seconds; after three missed beats it is marked stale.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};
use tungstenite::{Message, WebSocket};

pub const PROTOCOL_VERSION: u64 = 1;
pub const HEARTBEAT_INTERVAL: Duration = Duration::from_secs(2);
pub const STALE_AFTER_MISSED: u32 = 3;
const POLL: Duration = Duration::from_millis(5);
const REQUEST_TIMEOUT: Duration = Duration::from_secs(10);

/// Names of the five built-in services. Any other name registers as custom.
pub const KNOWN_SERVICES: [&str; 5] = [
    "vehicle_interface_service",
    "sensor_interface_service",
    "scenario_configurator_service",
    "groundtruth_publisher_service",
    "map_service",
];

/// JSON schema of the protocol, shipped as the contract for UI clients.
pub const SCHEMA: &str = include_str!("../control_schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub sim_address: String,
    pub ego_actor_id: u64,
    pub dt: f64,
    pub mode: String,
    pub map_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    NameConflict,
    NotRegistered,
    UnknownOp,
    BadRequest,
    VersionMismatch,
    UnknownMount,
    SpawnBlocked,
    InvalidEdit,
    CapacityExceeded,
    UnknownActor,
    Unsupported,
    Internal,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ControlFailure {
    pub code: ErrorCode,
    pub message: String,
}

impl ControlFailure {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlRequest {
    Register { name: String },
    Heartbeat,
    Deregister,
    ListPlugins,
    GetState,
    SetSensorEnabled { mount: String, enabled: bool },
    /// Remaining keys of the message, e.g. `{"add_source":{...}}`.
    ScenarioEdit(Map<String, Value>),
    DebugStreamSubscribe,
    SyncRegister { ids: Vec<u64> },
}

fn bad(message: impl Into<String>) -> ControlFailure {
    ControlFailure::new(ErrorCode::BadRequest, message)
}

fn take<T: serde::de::DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> Result<T, ControlFailure> {
    let v = map.remove(key).ok_or_else(|| bad(format!("missing field {key}")))?;
    serde_json::from_value(v).map_err(|e| bad(format!("field {key}: {e}")))
}

/// Strips `v` and `op` from a message object.
fn envelope(text: &str) -> Result<(String, Map<String, Value>), ControlFailure> {
    let value: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let Value::Object(mut map) = value else { return Err(bad("message is not an object")) };
    if let Some(v) = map.remove("v") {
        if v.as_u64() != Some(PROTOCOL_VERSION) {
            return Err(ControlFailure::new(ErrorCode::VersionMismatch, format!("unsupported version {v}")));
        }
    }
    let op = take::<String>(&mut map, "op")?;
    Ok((op, map))
}

impl ControlRequest {
    pub fn op(&self) -> &'static str {
        match self {
            Self::Register { .. } => "register",
            Self::Heartbeat => "heartbeat",
            Self::Deregister => "deregister",
            Self::ListPlugins => "list_plugins",
            Self::GetState => "get_state",
            Self::SetSensorEnabled { .. } => "set_sensor_enabled",
            Self::ScenarioEdit(_) => "scenario_edit",
            Self::DebugStreamSubscribe => "debug_stream_subscribe",
            Self::SyncRegister { .. } => "sync_register",
        }
    }

    pub fn parse(text: &str) -> Result<Self, ControlFailure> {
        let (op, mut map) = envelope(text)?;
        Ok(match op.as_str() {
            "register" => Self::Register { name: take(&mut map, "name")? },
            "heartbeat" => Self::Heartbeat,
            "deregister" => Self::Deregister,
            "list_plugins" => Self::ListPlugins,
            "get_state" => Self::GetState,
            "set_sensor_enabled" => {
                Self::SetSensorEnabled { mount: take(&mut map, "mount")?, enabled: take(&mut map, "enabled")? }
            }
            "scenario_edit" => {
                if map.len() != 1 {
                    return Err(bad("scenario_edit needs exactly one edit key"));
                }
                Self::ScenarioEdit(map)
            }
            "debug_stream_subscribe" => Self::DebugStreamSubscribe,
            "sync_register" => Self::SyncRegister { ids: take(&mut map, "ids")? },
            other => return Err(ControlFailure::new(ErrorCode::UnknownOp, format!("unknown op {other:?}"))),
        })
    }

    pub fn to_json(&self) -> String {
        let mut map = Map::new();
        map.insert("v".into(), json!(PROTOCOL_VERSION));
        map.insert("op".into(), json!(self.op()));
        match self {
            Self::Register { name } => {
                map.insert("name".into(), json!(name));
            }
            Self::SetSensorEnabled { mount, enabled } => {
                map.insert("mount".into(), json!(mount));
                map.insert("enabled".into(), json!(enabled));
            }
            Self::ScenarioEdit(edit) => map.extend(edit.clone()),
            Self::SyncRegister { ids } => {
                map.insert("ids".into(), json!(ids));
            }
            _ => {}
        }
        Value::Object(map).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ServerMessage {
    Session(SessionInfo),
    Ack {
        request: String,
        #[serde(default)]
        result: Value,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
    Debug {
        data: Value,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("server messages serialize");
        if let Value::Object(map) = &mut value {
            map.insert("v".into(), json!(PROTOCOL_VERSION));
        }
        value.to_string()
    }

    pub fn parse(text: &str) -> Result<Self, ControlFailure> {
        let (op, mut map) = envelope(text)?;
        map.insert("op".into(), json!(op));
        serde_json::from_value(Value::Object(map)).map_err(|e| bad(e.to_string()))
    }
}

impl From<ControlFailure> for ServerMessage {
    fn from(f: ControlFailure) -> Self {
        ServerMessage::Error { code: f.code, message: f.message }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PluginState {
    Registered,
    Running,
    Stale,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginDescriptor {
    pub name: String,
    pub state: PluginState,
    pub custom: bool,
    pub registrations: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct ControlConfig {
    pub heartbeat_interval: Duration,
    pub stale_after_missed: u32,
    pub debug_period: Duration,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { heartbeat_interval: HEARTBEAT_INTERVAL, stale_after_missed: STALE_AFTER_MISSED, debug_period: Duration::from_millis(100) }
    }
}

struct PluginEntry {
    descriptor: PluginDescriptor,
    last_beat: Instant,
    connection: u64,
}

/// Registered plugins and their liveness.
pub struct PluginRegistry {
    config: ControlConfig,
    entries: Mutex<BTreeMap<String, PluginEntry>>,
}

impl PluginRegistry {
    pub fn new(config: ControlConfig) -> Self {
        Self { config, entries: Mutex::new(BTreeMap::new()) }
    }

    fn stale_after(&self) -> Duration {
        self.config.heartbeat_interval * self.config.stale_after_missed
    }

    /// A name held by a live plugin conflicts; stale or stopped names may be
    /// taken over.
    pub fn register(&self, name: &str, connection: u64) -> Result<(), ControlFailure> {
        if name.is_empty() {
            return Err(bad("empty plugin name"));
        }
        self.refresh();
        let mut entries = self.entries.lock().unwrap();
        let now = Instant::now();
        match entries.get_mut(name) {
            Some(e) if matches!(e.descriptor.state, PluginState::Registered | PluginState::Running) => {
                Err(ControlFailure::new(ErrorCode::NameConflict, format!("plugin {name} already registered")))
            }
            Some(e) => {
                e.descriptor.state = PluginState::Registered;
                e.descriptor.registrations += 1;
                e.last_beat = now;
                e.connection = connection;
                Ok(())
            }
            None => {
                let descriptor = PluginDescriptor {
                    name: name.to_string(),
                    state: PluginState::Registered,
                    custom: !KNOWN_SERVICES.contains(&name),
                    registrations: 1,
                };
                entries.insert(name.to_string(), PluginEntry { descriptor, last_beat: now, connection });
                Ok(())
            }
        }
    }

    pub fn heartbeat(&self, name: &str, connection: u64) -> Result<(), ControlFailure> {
        let mut entries = self.entries.lock().unwrap();
        match entries.get_mut(name) {
            Some(e) if e.connection == connection && e.descriptor.state != PluginState::Stopped => {
                if e.descriptor.state == PluginState::Stale {
                    log::info!("plugin {name} recovered");
                }
                e.descriptor.state = PluginState::Running;
                e.last_beat = Instant::now();
                Ok(())
            }
            _ => Err(ControlFailure::new(ErrorCode::NotRegistered, format!("plugin {name} is not registered here"))),
        }
    }

    pub fn stop(&self, name: &str, connection: u64) {
        if let Some(e) = self.entries.lock().unwrap().get_mut(name) {
            if e.connection == connection {
                e.descriptor.state = PluginState::Stopped;
            }
        }
    }

    /// Marks plugins whose heartbeat is overdue as stale. Topics they
    /// advertised stay up.
    pub fn refresh(&self) {
        let limit = self.stale_after();
        for (name, e) in self.entries.lock().unwrap().iter_mut() {
            let live = matches!(e.descriptor.state, PluginState::Registered | PluginState::Running);
            if live && e.last_beat.elapsed() > limit {
                log::warn!("plugin {name} missed {} heartbeats, marked stale", self.config.stale_after_missed);
                e.descriptor.state = PluginState::Stale;
            }
        }
    }

    pub fn plugins(&self) -> Vec<PluginDescriptor> {
        self.refresh();
        self.entries.lock().unwrap().values().map(|e| e.descriptor.clone()).collect()
    }

    pub fn state(&self, name: &str) -> Option<PluginState> {
        self.refresh();
        self.entries.lock().unwrap().get(name).map(|e| e.descriptor.state)
    }
}

/// Server-side behavior behind the channel.
pub trait ControlHandler: Send + Sync + 'static {
    fn session(&self) -> SessionInfo;

    /// Ops not handled by the channel itself: `get_state`,
    /// `set_sensor_enabled`, `scenario_edit` and `sync_register`.
    fn handle(&self, request: &ControlRequest) -> Result<Value, ControlFailure>;

    /// One sample of the debug stream.
    fn debug_sample(&self) -> Option<Value> {
        None
    }
}

pub struct ControlServer {
    addr: SocketAddr,
    registry: Arc<PluginRegistry>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ControlServer {
    pub fn bind(addr: impl ToSocketAddrs, handler: Arc<dyn ControlHandler>, config: ControlConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let registry = Arc::new(PluginRegistry::new(config));
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();
        {
            let (registry, stop) = (registry.clone(), stop.clone());
            threads.push(std::thread::Builder::new().name("control-accept".into()).spawn(move || {
                let mut next_id = 0u64;
                for stream in listener.incoming() {
                    if stop.load(Ordering::Acquire) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    next_id += 1;
                    let (registry, stop, handler, id) = (registry.clone(), stop.clone(), handler.clone(), next_id);
                    std::thread::spawn(move || serve(stream, id, &*handler, &registry, config, &stop));
                }
            })?);
        }
        {
            let (registry, stop) = (registry.clone(), stop.clone());
            threads.push(std::thread::Builder::new().name("control-watchdog".into()).spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    registry.refresh();
                    std::thread::sleep(Duration::from_millis(50).min(config.heartbeat_interval));
                }
            })?);
        }
        Ok(Self { addr, registry, stop, threads })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn registry(&self) -> &Arc<PluginRegistry> {
        &self.registry
    }

    pub fn shutdown(&mut self) {
        if !self.stop.swap(true, Ordering::AcqRel) {
            let _ = TcpStream::connect(self.addr);
            for t in self.threads.drain(..) {
                let _ = t.join();
            }
        }
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn serve(
    stream: TcpStream,
    connection: u64,
    handler: &dyn ControlHandler,
    registry: &PluginRegistry,
    config: ControlConfig,
    stop: &AtomicBool,
) {
    let _ = stream.set_nodelay(true);
    let Ok(mut ws) = tungstenite::accept(stream) else { return };
    let _ = ws.get_ref().set_read_timeout(Some(POLL));
    let mut plugin: Option<String> = None;
    let mut debug_next: Option<Instant> = None;
    while !stop.load(Ordering::Acquire) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = dispatch(&text, connection, handler, registry, &mut plugin, &mut debug_next);
                if ws.send(Message::Text(reply.to_json())).is_err() {
                    break;
                }
            }
            Ok(Message::Binary(_)) => {
                let reply: ServerMessage = bad("binary messages are not supported").into();
                if ws.send(Message::Text(reply.to_json())).is_err() {
                    break;
                }
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                break;
            }
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {
                let _ = ws.flush();
            }
            Err(_) => break,
        }
        if let Some(at) = debug_next {
            if Instant::now() >= at {
                debug_next = Some(at + config.debug_period);
                if let Some(data) = handler.debug_sample() {
                    if ws.send(Message::Text(ServerMessage::Debug { data }.to_json())).is_err() {
                        break;
                    }
                }
            }
        }
    }
    if let Some(name) = plugin {
        registry.stop(&name, connection);
    }
}

fn dispatch(
    text: &str,
    connection: u64,
    handler: &dyn ControlHandler,
    registry: &PluginRegistry,
    plugin: &mut Option<String>,
    debug_next: &mut Option<Instant>,
) -> ServerMessage {
    let request = match ControlRequest::parse(text) {
        Ok(r) => r,
        Err(f) => return f.into(),
    };
    let ack = |result: Value| ServerMessage::Ack { request: request.op().to_string(), result };
    match &request {
        ControlRequest::Register { name } => {
            if plugin.is_some() {
                return bad("connection already registered").into();
            }
            match registry.register(name, connection) {
                Ok(()) => {
                    *plugin = Some(name.clone());
                    ServerMessage::Session(handler.session())
                }
                Err(f) => f.into(),
            }
        }
        ControlRequest::Heartbeat => match plugin {
            Some(name) => match registry.heartbeat(name, connection) {
                Ok(()) => ack(Value::Null),
                Err(f) => f.into(),
            },
            None => ControlFailure::new(ErrorCode::NotRegistered, "heartbeat before register").into(),
        },
        ControlRequest::Deregister => match plugin.take() {
            Some(name) => {
                registry.stop(&name, connection);
                ack(Value::Null)
            }
            None => ControlFailure::new(ErrorCode::NotRegistered, "not registered").into(),
        },
        ControlRequest::ListPlugins => ack(serde_json::to_value(registry.plugins()).unwrap_or_default()),
        ControlRequest::DebugStreamSubscribe => {
            debug_next.get_or_insert_with(Instant::now);
            ack(Value::Null)
        }
        _ => match handler.handle(&request) {
            Ok(result) => ack(result),
            Err(f) => f.into(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("control server unavailable: {0}")]
    ServerUnavailable(String),
    #[error("name conflict: {0}")]
    NameConflict(String),
    #[error("server refused request: {0}")]
    Refused(ControlFailure),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for reply")]
    Timeout,
}

struct ClientShared {
    outgoing: Mutex<mpsc::Sender<String>>,
    replies: Mutex<mpsc::Receiver<ServerMessage>>,
    pushes: Mutex<mpsc::Receiver<Value>>,
    request: Mutex<()>,
    closed: Arc<AtomicBool>,
}

/// Client end of the control channel. Cheap to clone; the connection closes
/// when the last clone is dropped.
#[derive(Clone)]
pub struct ControlClient {
    shared: Arc<ClientShared>,
}

fn split_ws_url(url: &str) -> Result<&str, ControlError> {
    let rest = url.strip_prefix("ws://").ok_or_else(|| ControlError::Protocol(format!("not a ws:// url: {url}")))?;
    Ok(rest.split('/').next().unwrap_or(rest))
}

impl ControlClient {
    pub fn connect(url: &str) -> Result<Self, ControlError> {
        let host = split_ws_url(url)?;
        let unavailable = |e: String| ControlError::ServerUnavailable(format!("{url}: {e}"));
        let addr = host.to_socket_addrs().map_err(|e| unavailable(e.to_string()))?.next().ok_or_else(|| unavailable("no address".into()))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2)).map_err(|e| unavailable(e.to_string()))?;
        let _ = stream.set_nodelay(true);
        stream.set_read_timeout(Some(Duration::from_secs(5))).map_err(|e| unavailable(e.to_string()))?;
        let (ws, _) = tungstenite::client(url, stream).map_err(|e| unavailable(e.to_string()))?;
        ws.get_ref().set_read_timeout(Some(POLL)).map_err(|e| unavailable(e.to_string()))?;
        let (out_tx, out_rx) = mpsc::channel();
        let (reply_tx, reply_rx) = mpsc::channel();
        let (push_tx, push_rx) = mpsc::channel();
        let closed = Arc::new(AtomicBool::new(false));
        let flag = closed.clone();
        std::thread::Builder::new()
            .name("control-client".into())
            .spawn(move || client_io(ws, out_rx, reply_tx, push_tx, flag))
            .map_err(|e| unavailable(e.to_string()))?;
        Ok(Self {
            shared: Arc::new(ClientShared {
                outgoing: Mutex::new(out_tx),
                replies: Mutex::new(reply_rx),
                pushes: Mutex::new(push_rx),
                request: Mutex::new(()),
                closed,
            }),
        })
    }

    /// Connects and registers `name`, returning the server's session.
    pub fn register(url: &str, name: &str) -> Result<(Self, SessionInfo), ControlError> {
        let client = Self::connect(url)?;
        match client.exchange(&ControlRequest::Register { name: name.to_string() })? {
            ServerMessage::Session(s) => Ok((client, s)),
            ServerMessage::Error { code: ErrorCode::NameConflict, message } => Err(ControlError::NameConflict(message)),
            ServerMessage::Error { code, message } => Err(ControlError::Refused(ControlFailure { code, message })),
            other => Err(ControlError::Protocol(format!("expected session, got {other:?}"))),
        }
    }

    pub fn exchange(&self, request: &ControlRequest) -> Result<ServerMessage, ControlError> {
        self.exchange_raw(&request.to_json())
    }

    /// Sends an arbitrary text message and waits for the matching reply.
    pub fn exchange_raw(&self, text: &str) -> Result<ServerMessage, ControlError> {
        let _guard = self.shared.request.lock().unwrap();
        if self.is_closed() {
            return Err(ControlError::Closed);
        }
        self.shared.outgoing.lock().unwrap().send(text.to_string()).map_err(|_| ControlError::Closed)?;
        let replies = self.shared.replies.lock().unwrap();
        let deadline = Instant::now() + REQUEST_TIMEOUT;
        loop {
            match replies.recv_timeout(Duration::from_millis(50)) {
                Ok(reply) => return Ok(reply),
                Err(mpsc::RecvTimeoutError::Disconnected) => return Err(ControlError::Closed),
                Err(mpsc::RecvTimeoutError::Timeout) if Instant::now() >= deadline => return Err(ControlError::Timeout),
                Err(mpsc::RecvTimeoutError::Timeout) => {}
            }
        }
    }

    /// Sends `request` and returns the ack result, mapping errors.
    pub fn request(&self, request: &ControlRequest) -> Result<Value, ControlError> {
        match self.exchange(request)? {
            ServerMessage::Ack { result, .. } => Ok(result),
            ServerMessage::Error { code, message } => Err(ControlError::Refused(ControlFailure { code, message })),
            other => Err(ControlError::Protocol(format!("expected ack, got {other:?}"))),
        }
    }

    pub fn heartbeat(&self) -> Result<(), ControlError> {
        self.request(&ControlRequest::Heartbeat).map(|_| ())
    }

    /// Sends a heartbeat every `interval` until the returned guard drops or
    /// the connection closes.
    pub fn spawn_heartbeat(&self, interval: Duration) -> HeartbeatGuard {
        let stop = Arc::new(AtomicBool::new(false));
        let (client, flag) = (self.clone(), stop.clone());
        let thread = std::thread::spawn(move || {
            let mut next = Instant::now();
            while !flag.load(Ordering::Acquire) {
                if Instant::now() >= next {
                    if client.heartbeat().is_err() && client.is_closed() {
                        break;
                    }
                    next += interval;
                }
                std::thread::sleep(Duration::from_millis(10).min(interval));
            }
        });
        HeartbeatGuard { stop, thread: Some(thread) }
    }

    pub fn next_push(&self, timeout: Duration) -> Option<Value> {
        self.shared.pushes.lock().unwrap().recv_timeout(timeout).ok()
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::Acquire)
    }
}

pub struct HeartbeatGuard {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Drop for HeartbeatGuard {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn client_io(
    mut ws: WebSocket<TcpStream>,
    outgoing: mpsc::Receiver<String>,
    replies: mpsc::Sender<ServerMessage>,
    pushes: mpsc::Sender<Value>,
    closed: Arc<AtomicBool>,
) {
    'io: loop {
        loop {
            match outgoing.try_recv() {
                Ok(text) => {
                    if ws.send(Message::Text(text)).is_err() {
                        break 'io;
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    break 'io;
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => match ServerMessage::parse(&text) {
                Ok(ServerMessage::Debug { data }) => {
                    let _ = pushes.send(data);
                }
                Ok(reply) => {
                    let _ = replies.send(reply);
                }
                Err(e) => log::warn!("bad control message: {e}"),
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {
                let _ = ws.flush();
            }
            Err(_) => break,
        }
    }
    closed.store(true, Ordering::Release);
}
