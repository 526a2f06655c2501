//! Config-driven sensor kit: LiDAR, cameras and navigation sensors attached
//! to the ego vehicle.

pub mod camera;
pub mod config;
mod kit;
pub mod lidar;
pub mod nav;
pub mod rays;
pub mod scene;

pub use config::{
    load_sensor_config, parse_sensor_mounts, parse_sensor_types, resolve_specs, SensorKind, SensorMount,
    SensorParams, SensorSpec, SensorTypeDef,
};
pub use kit::{
    build_sensor_kit, period_ticks, static_transforms, EnableMap, SensorKit, SensorNode, SensorOutput,
    TransformEdge, TransformTree,
};

use thiserror::Error;

/// Root of the static transform tree.
pub const BASE_FRAME: &str = "base_link";

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mount `{mount}` references unknown sensor type `{type_name}`")]
    UnknownType { mount: String, type_name: String },
    #[error("topic `{0}` is used by more than one sensor")]
    DuplicateTopic(String),
    #[error("frame `{0}` is used by more than one sensor")]
    DuplicateFrame(String),
    #[error("mount name `{0}` is used more than once")]
    DuplicateMount(String),
    #[error("bad parameter {name}: {reason}")]
    BadParam { name: String, reason: String },
    #[error("unknown sensor mount `{0}`")]
    UnknownMount(String),
    #[error("bad scan pattern: {0}")]
    BadScanPattern(String),
    #[error("no ego vehicle")]
    NoEgo,
}
