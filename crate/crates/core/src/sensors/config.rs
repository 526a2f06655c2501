//! YAML sensor definitions: a catalogue of sensor types and a list of mounts
//! placing instances of those types on the ego vehicle.
//!
//! `sensor_types.yaml` maps a type name to its `kind` plus blueprint-style
//! parameters:
//!
//! ```yaml
//! ouster_os1:
//!   kind: lidar
//!   horizontal_fov: 360
//!   vertical_fov: 45
//!   horizontal_resolution: 0.351
//!   vertical_channels: 128
//!   sensor_tick: 0.1
//!   range: 100
//! ```
//!
//! `sensor_mounts.yaml` is a list of mounts:
//!
//! ```yaml
//! - name: lidar_top
//!   type: ouster_os1
//!   topic: /edgar/sensor/lidar/top/points
//!   frame_id: lidar_top
//!   translation: [1.0, 0.0, 1.9]
//!   rotation: [0.0, 0.0, 0.0]
//! ```
//!
//! Parameters not used by the simulator (`iso`, `gamma`, ...) are kept in
//! [`SensorTypeDef::extra`].

use super::SensorError;
use crate::{Pose, Vec3};
use serde::Deserialize;
use serde_yaml::{Mapping, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    Lidar,
    Camera,
    Gnss,
    Imu,
    Odometry,
    /// GNSS receiver and IMU in one unit, publishing on two topics.
    GnssImu,
}

impl SensorKind {
    fn parse(raw: &str) -> Option<Self> {
        Some(match raw {
            "lidar" => Self::Lidar,
            "camera" => Self::Camera,
            "gnss" => Self::Gnss,
            "imu" => Self::Imu,
            "odometry" => Self::Odometry,
            "gnss_imu" => Self::GnssImu,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarParams {
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    /// Elevation of the top channel; defaults to half the vertical fov.
    pub upper_fov: f64,
    pub horizontal_resolution: f64,
    pub vertical_channels: u32,
    pub range: f64,
    pub std_dev: [f64; 3],
    pub scan_pattern_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub image_size_x: u32,
    pub image_size_y: u32,
    /// Horizontal field of view, degrees.
    pub fov: f64,
}

/// Position noise in meters along north, east and up.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GnssParams {
    pub noise_lat_stddev: f64,
    pub noise_lon_stddev: f64,
    pub noise_alt_stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImuParams {
    pub accel_std: [f64; 3],
    pub gyro_std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum SensorParams {
    Lidar(LidarParams),
    Camera(CameraParams),
    Gnss(GnssParams),
    Imu(ImuParams),
    Odometry,
    GnssImu { gnss: GnssParams, imu: ImuParams, imu_tick: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorTypeDef {
    pub name: String,
    pub kind: SensorKind,
    pub sensor_tick: f64,
    pub params: SensorParams,
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorMount {
    pub name: String,
    pub type_name: String,
    pub topic: String,
    /// Extra topics for multi-output sensors, keyed by output name.
    pub topics: BTreeMap<String, String>,
    pub frame_id: String,
    pub translation: Vec3,
    /// Roll, pitch, yaw in radians.
    pub rotation: Vec3,
    pub enabled: bool,
}

impl SensorMount {
    /// Mount transform relative to `base_link`.
    pub fn pose(&self) -> Pose {
        Pose::new(self.translation, self.rotation.x, self.rotation.y, self.rotation.z)
    }
}

/// A mount resolved against its type.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub def: SensorTypeDef,
    pub mount: SensorMount,
}

impl SensorSpec {
    /// Output topics keyed by output name.
    pub fn output_topics(&self) -> BTreeMap<&'static str, String> {
        let m = &self.mount;
        let pick = |key: &str, fallback: String| m.topics.get(key).cloned().unwrap_or(fallback);
        let mut out = BTreeMap::new();
        match self.def.kind {
            SensorKind::Lidar => {
                out.insert("points", m.topic.clone());
            }
            SensorKind::Camera => {
                out.insert("image", m.topic.clone());
                let parent = m.topic.rsplit_once('/').map(|(p, _)| p.to_string()).unwrap_or_default();
                out.insert("camera_info", pick("camera_info", format!("{parent}/camera_info")));
            }
            SensorKind::Gnss => {
                out.insert("fix", m.topic.clone());
            }
            SensorKind::Imu => {
                out.insert("imu", m.topic.clone());
            }
            SensorKind::Odometry => {
                out.insert("odometry", m.topic.clone());
            }
            SensorKind::GnssImu => {
                out.insert("fix", pick("fix", format!("{}/fix", m.topic)));
                out.insert("imu", pick("imu", format!("{}/imu", m.topic)));
            }
        }
        out
    }
}

fn bad(name: &str, reason: impl Into<String>) -> SensorError {
    SensorError::BadParam { name: name.to_string(), reason: reason.into() }
}

struct Params<'a> {
    type_name: &'a str,
    map: BTreeMap<String, Value>,
}

impl Params<'_> {
    fn key(&self, key: &str) -> String {
        format!("{}.{}", self.type_name, key)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, SensorError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(&self.key(key), format!("expected a number, got {v:?}"))),
        }
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64, SensorError> {
        let v = self.f64_or(key, default)?;
        if v <= 0.0 {
            return Err(bad(&self.key(key), format!("must be > 0, got {v}")));
        }
        Ok(v)
    }

    fn non_negative(&mut self, key: &str) -> Result<f64, SensorError> {
        let v = self.f64_or(key, 0.0)?;
        if v < 0.0 {
            return Err(bad(&self.key(key), format!("must be >= 0, got {v}")));
        }
        Ok(v)
    }

    fn fov(&mut self, key: &str, default: f64) -> Result<f64, SensorError> {
        let v = self.f64_or(key, default)?;
        if !(v > 0.0 && v <= 360.0) {
            return Err(bad(&self.key(key), format!("must be in (0, 360], got {v}")));
        }
        Ok(v)
    }

    fn count(&mut self, key: &str, default: u32) -> Result<u32, SensorError> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .filter(|&n| n > 0 && n <= u32::MAX as u64)
                .map(|n| n as u32)
                .ok_or_else(|| bad(&self.key(key), format!("expected a positive integer, got {v:?}"))),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, SensorError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(bad(&self.key(key), format!("expected a string, got {v:?}"))),
        }
    }

    fn gnss(&mut self) -> Result<GnssParams, SensorError> {
        Ok(GnssParams {
            noise_lat_stddev: self.non_negative("noise_lat_stddev")?,
            noise_lon_stddev: self.non_negative("noise_lon_stddev")?,
            noise_alt_stddev: self.non_negative("noise_alt_stddev")?,
        })
    }

    fn imu(&mut self) -> Result<ImuParams, SensorError> {
        let mut accel_std = [0.0; 3];
        let mut gyro_std = [0.0; 3];
        for (i, axis) in ["x", "y", "z"].iter().enumerate() {
            accel_std[i] = self.non_negative(&format!("noise_accel_stddev_{axis}"))?;
            gyro_std[i] = self.non_negative(&format!("noise_gyro_stddev_{axis}"))?;
        }
        Ok(ImuParams { accel_std, gyro_std })
    }
}

fn default_tick(kind: SensorKind) -> f64 {
    match kind {
        SensorKind::Lidar | SensorKind::Gnss | SensorKind::GnssImu => 0.1,
        SensorKind::Camera | SensorKind::Odometry => 0.05,
        SensorKind::Imu => 0.01,
    }
}

fn parse_type(name: &str, raw: Mapping, base_dir: Option<&Path>) -> Result<SensorTypeDef, SensorError> {
    let mut map = BTreeMap::new();
    for (k, v) in raw {
        let key = k.as_str().ok_or_else(|| bad(name, "parameter names must be strings"))?;
        map.insert(key.to_string(), v);
    }
    let mut p = Params { type_name: name, map };
    let kind_raw = p.string("kind")?.ok_or_else(|| bad(&p.key("kind"), "missing"))?;
    let kind = SensorKind::parse(&kind_raw).ok_or_else(|| bad(&p.key("kind"), format!("unknown kind `{kind_raw}`")))?;
    let sensor_tick = p.positive("sensor_tick", default_tick(kind))?;
    let params = match kind {
        SensorKind::Lidar => {
            let horizontal_fov = p.fov("horizontal_fov", 360.0)?;
            let vertical_fov = p.f64_or("vertical_fov", 30.0)?;
            if !(vertical_fov > 0.0 && vertical_fov <= 180.0) {
                return Err(bad(&p.key("vertical_fov"), format!("must be in (0, 180], got {vertical_fov}")));
            }
            let upper_fov = p.f64_or("upper_fov", vertical_fov / 2.0)?;
            let horizontal_resolution = p.positive("horizontal_resolution", 0.2)?;
            let vertical_channels = p.count("vertical_channels", 32)?;
            let range = p.positive("range", 100.0)?;
            let mut std_dev = [0.0; 3];
            for (i, axis) in ["x", "y", "z"].iter().enumerate() {
                std_dev[i] = p.non_negative(&format!("{axis}_standard_deviation"))?;
            }
            let scan_pattern_path = p.string("scan_pattern_path")?.map(|s| {
                let path = PathBuf::from(s);
                match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path,
                }
            });
            SensorParams::Lidar(LidarParams {
                horizontal_fov,
                vertical_fov,
                upper_fov,
                horizontal_resolution,
                vertical_channels,
                range,
                std_dev,
                scan_pattern_path,
            })
        }
        SensorKind::Camera => SensorParams::Camera(CameraParams {
            image_size_x: p.count("image_size_x", 800)?,
            image_size_y: p.count("image_size_y", 600)?,
            fov: {
                let fov = p.fov("fov", 90.0)?;
                if fov >= 180.0 {
                    return Err(bad(&p.key("fov"), "a pinhole camera needs fov < 180"));
                }
                fov
            },
        }),
        SensorKind::Gnss => SensorParams::Gnss(p.gnss()?),
        SensorKind::Imu => SensorParams::Imu(p.imu()?),
        SensorKind::Odometry => SensorParams::Odometry,
        SensorKind::GnssImu => {
            let gnss = p.gnss()?;
            let imu = p.imu()?;
            let imu_tick = p.positive("imu_sensor_tick", sensor_tick)?;
            SensorParams::GnssImu { gnss, imu, imu_tick }
        }
    };
    Ok(SensorTypeDef { name: name.to_string(), kind, sensor_tick, params, extra: p.map })
}

/// Parses `sensor_types.yaml`. Relative scan-pattern paths resolve against
/// `base_dir` when given.
pub fn parse_sensor_types(text: &str, base_dir: Option<&Path>) -> Result<BTreeMap<String, SensorTypeDef>, SensorError> {
    let raw: BTreeMap<String, Mapping> =
        serde_yaml::from_str(text).map_err(|e| SensorError::Parse(format!("sensor types: {e}")))?;
    raw.into_iter()
        .map(|(name, map)| parse_type(&name, map, base_dir).map(|def| (name, def)))
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMount {
    name: Option<String>,
    #[serde(rename = "type")]
    type_name: String,
    topic: String,
    #[serde(default)]
    topics: BTreeMap<String, String>,
    frame_id: String,
    #[serde(default)]
    translation: [f64; 3],
    #[serde(default)]
    rotation: [f64; 3],
    #[serde(default = "enabled_default")]
    enabled: bool,
}

fn enabled_default() -> bool {
    true
}

pub fn parse_sensor_mounts(text: &str) -> Result<Vec<SensorMount>, SensorError> {
    let raw: Option<Vec<RawMount>> =
        serde_yaml::from_str(text).map_err(|e| SensorError::Parse(format!("sensor mounts: {e}")))?;
    raw.unwrap_or_default()
        .into_iter()
        .map(|m| {
            let translation = Vec3::from(m.translation);
            let rotation = Vec3::from(m.rotation);
            if !translation.iter().chain(rotation.iter()).all(|v| v.is_finite()) {
                return Err(bad(&m.frame_id, "mount transform must be finite"));
            }
            Ok(SensorMount {
                name: m.name.unwrap_or_else(|| m.frame_id.clone()),
                type_name: m.type_name,
                topic: m.topic,
                topics: m.topics,
                frame_id: m.frame_id,
                translation,
                rotation,
                enabled: m.enabled,
            })
        })
        .collect()
}

/// Resolves mounts against types and checks that names, topics and frames
/// are unique.
pub fn resolve_specs(
    types: &BTreeMap<String, SensorTypeDef>,
    mounts: Vec<SensorMount>,
) -> Result<Vec<SensorSpec>, SensorError> {
    let mut names = BTreeSet::new();
    let mut topics = BTreeSet::new();
    let mut frames = BTreeSet::new();
    let mut specs = Vec::with_capacity(mounts.len());
    for mount in mounts {
        let def = types.get(&mount.type_name).cloned().ok_or_else(|| SensorError::UnknownType {
            mount: mount.name.clone(),
            type_name: mount.type_name.clone(),
        })?;
        if mount.frame_id == super::BASE_FRAME || !frames.insert(mount.frame_id.clone()) {
            return Err(SensorError::DuplicateFrame(mount.frame_id));
        }
        if !names.insert(mount.name.clone()) {
            return Err(SensorError::DuplicateMount(mount.name));
        }
        let spec = SensorSpec { def, mount };
        for topic in spec.output_topics().into_values() {
            if !topics.insert(topic.clone()) {
                return Err(SensorError::DuplicateTopic(topic));
            }
        }
        specs.push(spec);
    }
    Ok(specs)
}

fn read(path: &Path) -> Result<String, SensorError> {
    std::fs::read_to_string(path).map_err(|e| SensorError::Io(format!("{}: {e}", path.display())))
}

pub fn load_sensor_config(types_path: &Path, mounts_path: &Path) -> Result<Vec<SensorSpec>, SensorError> {
    let types = parse_sensor_types(&read(types_path)?, types_path.parent())?;
    let mounts = parse_sensor_mounts(&read(mounts_path)?)?;
    resolve_specs(&types, mounts)
}
