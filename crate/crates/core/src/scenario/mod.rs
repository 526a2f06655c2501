//! Scene configuration above the road network: static placements, seeded
//! traffic, vehicle sources and sinks, pedestrian flows and weather.
//!
//! Scenarios are stored as JSON carrying `"version": 1`. Positions are planar
//! map coordinates written inline as `"x"` and `"y"`.

mod engine;

pub use engine::{FlowStats, ScenarioEngine, SourceStats, PEDESTRIAN_EXTENT, PROP_EXTENT, VEHICLE_EXTENT};

use crate::world::{ActorId, WorldError};
use crate::Vec3;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCENARIO_VERSION: u32 = 1;
pub const DEFAULT_SINK_RADIUS: f64 = 4.0;
pub const DEFAULT_WALK_SPEED: f64 = 1.4;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("scenario version {found} is not supported (expected {SCENARIO_VERSION})")]
    SchemaVersionMismatch { found: u64 },
    #[error("{field} = {value} is out of range")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("no {kind} at index {index}")]
    NoSuchElement { kind: &'static str, index: usize },
    #[error("position ({x}, {y}) is outside the map")]
    OutsideMap { x: f64, y: f64 },
    #[error("spawn blocked by actor {0}")]
    SpawnBlocked(ActorId),
    #[error("world rejected the change: {0}")]
    World(String),
}

impl From<WorldError> for ScenarioError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::SpawnBlocked(id) => Self::SpawnBlocked(id),
            other => Self::World(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vec3(self) -> Vec3 {
        Vec3::new(self.x, self.y, 0.0)
    }

    fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticKind {
    Vehicle,
    Prop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticPlacement {
    pub kind: StaticKind,
    #[serde(flatten)]
    pub position: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficVehicle {
    #[serde(flatten)]
    pub position: Position,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    #[serde(flatten)]
    pub position: Position,
    pub delay_s: f64,
}

fn default_sink_radius() -> f64 {
    DEFAULT_SINK_RADIUS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sink {
    #[serde(flatten)]
    pub position: Position,
    #[serde(default = "default_sink_radius")]
    pub radius_m: f64,
}

fn default_walk_speed() -> f64 {
    DEFAULT_WALK_SPEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedFlow {
    pub path: Vec<Position>,
    pub crowd_size: u32,
    pub respawn_delay_s: f64,
    #[serde(default = "default_walk_speed")]
    pub walk_speed: f64,
}

/// Weather settings. Recorded and published, with no effect on sensor
/// models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherParams {
    pub cloudiness: f64,
    pub precipitation: f64,
    pub wetness: f64,
    pub fog_density: f64,
    pub sun_altitude: f64,
    pub sun_azimuth: f64,
}

impl Default for WeatherParams {
    fn default() -> Self {
        Self {
            cloudiness: 0.0,
            precipitation: 0.0,
            wetness: 0.0,
            fog_density: 0.0,
            sun_altitude: 45.0,
            sun_azimuth: 0.0,
        }
    }
}

impl WeatherParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let percent = [
            ("cloudiness", self.cloudiness),
            ("precipitation", self.precipitation),
            ("wetness", self.wetness),
            ("fog_density", self.fog_density),
        ];
        for (field, value) in percent {
            if !(0.0..=100.0).contains(&value) {
                return Err(ScenarioError::OutOfRange { field, value });
            }
        }
        if !(-90.0..=90.0).contains(&self.sun_altitude) {
            return Err(ScenarioError::OutOfRange { field: "sun_altitude", value: self.sun_altitude });
        }
        if !(0.0..360.0).contains(&self.sun_azimuth) {
            return Err(ScenarioError::OutOfRange { field: "sun_azimuth", value: self.sun_azimuth });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub statics: Vec<StaticPlacement>,
    #[serde(default)]
    pub traffic_vehicles: Vec<TrafficVehicle>,
    #[serde(default)]
    pub sources: Vec<Source>,
    #[serde(default)]
    pub sinks: Vec<Sink>,
    #[serde(default)]
    pub ped_flows: Vec<PedFlow>,
    #[serde(default)]
    pub weather: WeatherParams,
    #[serde(default)]
    pub global_seed: u64,
    /// Overrides the server's default ego start pose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_start: Option<EgoStart>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoStart {
    #[serde(flatten)]
    pub position: Position,
    #[serde(default)]
    pub yaw: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            version: SCENARIO_VERSION,
            statics: Vec::new(),
            traffic_vehicles: Vec::new(),
            sources: Vec::new(),
            sinks: Vec::new(),
            ped_flows: Vec::new(),
            weather: WeatherParams::default(),
            global_seed: 0,
            ego_start: None,
        }
    }
}

fn check_position(p: Position) -> Result<(), ScenarioError> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::Invalid(format!("non-finite position ({}, {})", p.x, p.y)))
    }
}

pub(crate) fn check_source(s: &Source) -> Result<(), ScenarioError> {
    check_position(s.position)?;
    if !(s.delay_s > 0.0 && s.delay_s.is_finite()) {
        return Err(ScenarioError::OutOfRange { field: "delay_s", value: s.delay_s });
    }
    Ok(())
}

pub(crate) fn check_sink(s: &Sink) -> Result<(), ScenarioError> {
    check_position(s.position)?;
    if !(s.radius_m > 0.0 && s.radius_m.is_finite()) {
        return Err(ScenarioError::OutOfRange { field: "radius_m", value: s.radius_m });
    }
    Ok(())
}

pub(crate) fn check_flow(f: &PedFlow) -> Result<(), ScenarioError> {
    if f.path.len() < 2 {
        return Err(ScenarioError::Invalid("pedestrian path needs at least two points".into()));
    }
    for &p in &f.path {
        check_position(p)?;
    }
    if f.crowd_size < 1 {
        return Err(ScenarioError::OutOfRange { field: "crowd_size", value: f.crowd_size as f64 });
    }
    if !(f.respawn_delay_s >= 0.0 && f.respawn_delay_s.is_finite()) {
        return Err(ScenarioError::OutOfRange { field: "respawn_delay_s", value: f.respawn_delay_s });
    }
    if !(f.walk_speed > 0.0 && f.walk_speed.is_finite()) {
        return Err(ScenarioError::OutOfRange { field: "walk_speed", value: f.walk_speed });
    }
    let length: f64 = f.path.windows(2).map(|w| (w[1].to_vec3() - w[0].to_vec3()).norm()).sum();
    if length <= 0.0 {
        return Err(ScenarioError::Invalid("pedestrian path has zero length".into()));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::SchemaVersionMismatch { found: self.version as u64 });
        }
        for s in &self.statics {
            check_position(s.position)?;
        }
        for t in &self.traffic_vehicles {
            check_position(t.position)?;
        }
        if let Some(start) = self.ego_start {
            check_position(start.position)?;
            if !start.yaw.is_finite() {
                return Err(ScenarioError::Invalid("non-finite ego start yaw".into()));
            }
        }
        self.sources.iter().try_for_each(check_source)?;
        self.sinks.iter().try_for_each(check_sink)?;
        self.ped_flows.iter().try_for_each(check_flow)?;
        self.weather.validate()
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCENARIO_VERSION as u64 => {}
            Some(found) => return Err(ScenarioError::SchemaVersionMismatch { found }),
            None => return Err(ScenarioError::Parse("missing integer field `version`".into())),
        }
        let config: Self = serde_json::from_value(value).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))
    }
}

/// Live scenario change, as carried by `scenario_edit` control messages,
/// e.g. `{"add_source": {"x": 10, "y": 2, "delay_s": 2}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioEdit {
    AddStatic(StaticPlacement),
    RemoveStatic { index: usize },
    AddTrafficVehicle(TrafficVehicle),
    AddSource(Source),
    RemoveSource { index: usize },
    AddSink(Sink),
    RemoveSink { index: usize },
    AddFlow(PedFlow),
    RemoveFlow { index: usize },
    SetWeather(WeatherParams),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScenarioConfig {
        ScenarioConfig {
            statics: vec![StaticPlacement { kind: StaticKind::Vehicle, position: Position::new(12.5, -3.0) }],
            traffic_vehicles: vec![TrafficVehicle { position: Position::new(0.0, 0.0), seed: 7 }],
            sources: vec![
                Source { position: Position::new(10.0, 2.0), delay_s: 2.0 },
                Source { position: Position::new(-40.0, 0.1), delay_s: 3.3 },
            ],
            sinks: vec![Sink { position: Position::new(90.0, 0.0), radius_m: 4.0 }],
            ped_flows: vec![PedFlow {
                path: vec![Position::new(0.0, 8.0), Position::new(20.0, 8.0)],
                crowd_size: 5,
                respawn_delay_s: 2.0,
                walk_speed: 1.4,
            }],
            weather: WeatherParams { precipitation: 50.0, sun_azimuth: 359.9, ..Default::default() },
            global_seed: 42,
            ego_start: Some(EgoStart { position: Position::new(-28.0, -30.0), yaw: 0.25 }),
            ..Default::default()
        }
    }

    #[test]
    fn save_load_round_trip_is_deep_equal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        let config = sample();
        config.save(&path).unwrap();
        assert_eq!(ScenarioConfig::load(&path).unwrap(), config);
        let first = std::fs::read(&path).unwrap();
        ScenarioConfig::load(&path).unwrap().save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn empty_config_is_a_valid_minimal_file() {
        let config = ScenarioConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(config, ScenarioConfig::default());
        assert_eq!(ScenarioConfig::from_json(&config.to_json()).unwrap(), config);
    }

    #[test]
    fn future_version_is_rejected() {
        assert_eq!(
            ScenarioConfig::from_json(r#"{"version": 2, "sources": "whatever"}"#),
            Err(ScenarioError::SchemaVersionMismatch { found: 2 })
        );
    }

    #[test]
    fn weather_ranges_are_enforced() {
        let fog = WeatherParams { fog_density: 120.0, ..Default::default() };
        assert_eq!(fog.validate(), Err(ScenarioError::OutOfRange { field: "fog_density", value: 120.0 }));
        assert!(WeatherParams { sun_azimuth: 360.0, ..Default::default() }.validate().is_err());
        assert!(WeatherParams { sun_altitude: -90.0, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn invalid_elements_are_rejected() {
        let mut c = sample();
        c.sources[0].delay_s = 0.0;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.sinks[0].radius_m = -1.0;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.ped_flows[0].crowd_size = 0;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.ped_flows[0].path.truncate(1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn edit_json_shape() {
        let edit: ScenarioEdit = serde_json::from_str(r#"{"add_source":{"x":10,"y":2,"delay_s":2}}"#).unwrap();
        assert_eq!(edit, ScenarioEdit::AddSource(Source { position: Position::new(10.0, 2.0), delay_s: 2.0 }));
        let sink: ScenarioEdit = serde_json::from_str(r#"{"add_sink":{"x":1,"y":2}}"#).unwrap();
        assert_eq!(sink, ScenarioEdit::AddSink(Sink { position: Position::new(1.0, 2.0), radius_m: 4.0 }));
        let remove = serde_json::to_string(&ScenarioEdit::RemoveSource { index: 3 }).unwrap();
        assert_eq!(remove, r#"{"remove_source":{"index":3}}"#);
    }
}
