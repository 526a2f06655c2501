use hil_core::world::{MAX_DT, MIN_DT};
use hil_core::TickMode;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("{what} not found: {path}")]
    MissingFile { what: &'static str, path: PathBuf },
    #[error("dt {0} is outside [{MIN_DT}, {MAX_DT}]")]
    BadDt(f64),
    #[error("map {path}: {reason}")]
    Map { path: PathBuf, reason: String },
    #[error("sensor config: {0}")]
    Sensors(String),
    #[error("actuation config: {0}")]
    Actuation(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("world: {0}")]
    World(String),
    #[error("cannot listen for {what} on {addr}: {reason}")]
    Bind { what: &'static str, addr: String, reason: String },
    #[error("sync primary: {0}")]
    Sync(String),
}

/// Primary server that a secondary replicates actors from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncPrimary {
    pub bus: String,
    pub control_url: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub map: PathBuf,
    pub dt: f64,
    pub mode: TickMode,
    pub seed: u64,
    pub bus_listen: String,
    pub control_listen: String,
    pub sensor_types: PathBuf,
    pub sensor_mounts: PathBuf,
    /// Defaults to the built-in actuation settings.
    pub actuation: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    /// Run as a secondary: no own ego, actors replicated from the primary.
    pub sync_primary: Option<SyncPrimary>,
}

impl ServerConfig {
    pub fn new(map: impl Into<PathBuf>, sensor_types: impl Into<PathBuf>, sensor_mounts: impl Into<PathBuf>) -> Self {
        Self {
            map: map.into(),
            dt: 0.05,
            mode: TickMode::SyncRealtime,
            seed: 0,
            bus_listen: "127.0.0.1:0".into(),
            control_listen: "127.0.0.1:0".into(),
            sensor_types: sensor_types.into(),
            sensor_mounts: sensor_mounts.into(),
            actuation: None,
            scenario: None,
            sync_primary: None,
        }
    }

    /// Checks the step size and that every referenced file exists.
    pub fn validate(&self) -> Result<(), ServerError> {
        if !(MIN_DT..=MAX_DT).contains(&self.dt) {
            return Err(ServerError::BadDt(self.dt));
        }
        let mut files: Vec<(&'static str, &Path)> = vec![
            ("map", &self.map),
            ("sensor types", &self.sensor_types),
            ("sensor mounts", &self.sensor_mounts),
        ];
        if let Some(p) = &self.actuation {
            files.push(("actuation config", p));
        }
        if let Some(p) = &self.scenario {
            files.push(("scenario", p));
        }
        for (what, path) in files {
            if !path.is_file() {
                return Err(ServerError::MissingFile { what, path: path.to_path_buf() });
            }
        }
        Ok(())
    }
}

/// Session mode string handed to plugins.
pub fn mode_name(mode: TickMode) -> &'static str {
    match mode {
        TickMode::SyncRealtime => "SyncRealtime",
        TickMode::SyncFast => "SyncFast",
        TickMode::Async => "Async",
    }
}

/// Accepts the session names (`SyncRealtime`), their snake_case forms and
/// the short forms `realtime`, `fast` and `async`.
pub fn parse_mode(raw: &str) -> Result<TickMode, String> {
    match raw.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
        "syncrealtime" | "realtime" => Ok(TickMode::SyncRealtime),
        "syncfast" | "fast" => Ok(TickMode::SyncFast),
        "async" => Ok(TickMode::Async),
        _ => Err(format!("unknown tick mode {raw:?}; expected sync_realtime, sync_fast or async")),
    }
}
