//! Topic names and their default QoS.

use hil_transport::{Qos, TopicSpec};

pub const CLOCK: &str = "/clock";
pub const TF_STATIC: &str = "/tf_static";

/// Encoded world frame, one per tick.
pub const FRAME: &str = "/sim/frame";
/// JSON vehicle report, one per tick.
pub const VEHICLE_REPORT: &str = "/sim/vehicle_report";
/// Filtered commands from the vehicle interface service to the world.
pub const EGO_COMMAND: &str = "/sim/ego_command";
pub const ROAD_NETWORK: &str = "/map/road_network";
pub const SCENARIO_STATE: &str = "/scenario/state";
pub const SENSOR_ENABLE: &str = "/sensing/enabled";
pub const SYNC_REF_STATES: &str = "/sync/ref_states";

pub const CONTROL_CMD: &str = "/control/command/control_cmd";
pub const STEERING_STATUS: &str = "/vehicle/status/steering_status";
pub const GEAR_STATUS: &str = "/vehicle/status/gear_status";
pub const VELOCITY_STATUS: &str = "/vehicle/status/velocity_status";

pub const WEATHER: &str = "/scenario/weather";
pub const DETECTED_OBJECTS: &str = "/groundtruth/detected_objects";
pub const TRACKED_OBJECTS: &str = "/groundtruth/tracked_objects";
pub const PREDICTED_OBJECTS: &str = "/groundtruth/predicted_objects";
pub const POINTCLOUD_MAP: &str = "/map/pointcloud_map";

pub fn clock() -> TopicSpec {
    TopicSpec::new(CLOCK, Qos::control())
}

pub fn frame() -> TopicSpec {
    TopicSpec::new(FRAME, Qos::BestEffort(4))
}

pub fn vehicle_report() -> TopicSpec {
    TopicSpec::new(VEHICLE_REPORT, Qos::BestEffort(4))
}

pub fn ego_command() -> TopicSpec {
    TopicSpec::new(EGO_COMMAND, Qos::control())
}

pub fn control_cmd() -> TopicSpec {
    TopicSpec::new(CONTROL_CMD, Qos::control())
}

pub fn status(name: &str) -> TopicSpec {
    TopicSpec::new(name, Qos::control())
}

/// Reliable depth-1 topic that replays its last message to late subscribers.
pub fn latched(name: &str) -> TopicSpec {
    TopicSpec::new(name, Qos::Reliable(1)).latched(true)
}

pub fn sensor(name: &str) -> TopicSpec {
    TopicSpec::new(name, Qos::sensor())
}

pub fn sync_ref_states() -> TopicSpec {
    TopicSpec::new(SYNC_REF_STATES, Qos::control())
}
