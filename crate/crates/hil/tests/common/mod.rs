#![allow(dead_code)]

use hil::config::ServerConfig;
use hil_core::TickMode;
use std::path::{Path, PathBuf};

pub fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn block_loop() -> PathBuf {
    configs().join("block_loop.json")
}

pub fn scenario(name: &str) -> PathBuf {
    configs().join("scenarios").join(format!("{name}.json"))
}

const LIGHT_TYPES: &str = "\
small_cam:
  kind: camera
  image_size_x: 64
  image_size_y: 40
  sensor_tick: 0.05
  fov: 90
small_lidar:
  kind: lidar
  horizontal_fov: 90
  vertical_fov: 20
  horizontal_resolution: 1.0
  vertical_channels: 8
  sensor_tick: 0.1
  range: 60
imu:
  kind: imu
  sensor_tick: 0.05
gnss:
  kind: gnss
  sensor_tick: 0.1
odom:
  kind: odometry
  sensor_tick: 0.05
";

const LIGHT_MOUNTS: &str = "\
- name: cam_front
  type: small_cam
  topic: /sensing/camera/front/image_raw
  frame_id: camera_front
  translation: [2.1, 0.0, 1.6]
- name: lidar_front
  type: small_lidar
  topic: /sensing/lidar/front/points
  frame_id: lidar_front
  translation: [2.4, 0.0, 1.8]
- name: imu
  type: imu
  topic: /sensing/imu/imu
  frame_id: imu
  translation: [0.0, 0.0, 1.0]
- name: gnss
  type: gnss
  topic: /sensing/gnss/fix
  frame_id: gnss
  translation: [0.0, 0.0, 1.9]
- name: odometry
  type: odom
  topic: /sensing/odometry
  frame_id: odometry
  translation: [0.0, 0.0, 0.5]
";

/// A small five-sensor kit written into `dir`, cheap enough to run at full
/// rate alongside the tests.
pub fn light_kit(dir: &Path) -> (PathBuf, PathBuf) {
    let types = dir.join("types.yaml");
    let mounts = dir.join("mounts.yaml");
    std::fs::write(&types, LIGHT_TYPES).unwrap();
    std::fs::write(&mounts, LIGHT_MOUNTS).unwrap();
    (types, mounts)
}

pub fn light_config(dir: &Path, mode: TickMode) -> ServerConfig {
    let (types, mounts) = light_kit(dir);
    let mut cfg = ServerConfig::new(block_loop(), types, mounts);
    cfg.mode = mode;
    cfg
}
