//! GNSS fixes, IMU samples and odometry derived from the ego state.

use super::config::{GnssParams, ImuParams};
use crate::codec::{get_f64, get_magic, get_str, get_vec3, put_str, put_vec3, DecodeError};
use crate::road::GeoOrigin;
use crate::world::Actor;
use crate::{Pose, Vec3};
use bytes::BufMut;
use nalgebra::UnitQuaternion;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const GRAVITY: f64 = 9.80665;

const WGS84_A: f64 = 6_378_137.0;
const WGS84_E2: f64 = 6.694_379_990_14e-3;

pub const GNSS_MAGIC: [u8; 4] = *b"GNS1";
pub const IMU_MAGIC: [u8; 4] = *b"IMU1";
pub const ODOMETRY_MAGIC: [u8; 4] = *b"ODO1";

/// Local-tangent-plane conversion from ENU meters around `origin` to
/// latitude/longitude in degrees and altitude in meters.
pub fn enu_to_wgs84(origin: &GeoOrigin, enu: &Vec3) -> (f64, f64, f64) {
    let phi = origin.lat.to_radians();
    let s = phi.sin();
    let w = (1.0 - WGS84_E2 * s * s).sqrt();
    let prime_vertical = WGS84_A / w;
    let meridian = WGS84_A * (1.0 - WGS84_E2) / (w * w * w);
    let lat = origin.lat + (enu.y / (meridian + origin.alt)).to_degrees();
    let lon = origin.lon + (enu.x / ((prime_vertical + origin.alt) * phi.cos())).to_degrees();
    (lat, lon, origin.alt + enu.z)
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std > 0.0 {
        let n: f64 = StandardNormal.sample(rng);
        n * std
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnssFix {
    pub stamp: f64,
    pub frame_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
}

impl GnssFix {
    pub fn sample(
        antenna: &Vec3,
        origin: &GeoOrigin,
        noise: &GnssParams,
        rng: &mut ChaCha8Rng,
        stamp: f64,
        frame_id: &str,
    ) -> Self {
        let noisy = antenna
            + Vec3::new(
                gauss(rng, noise.noise_lon_stddev),
                gauss(rng, noise.noise_lat_stddev),
                gauss(rng, noise.noise_alt_stddev),
            );
        let (latitude, longitude, altitude) = enu_to_wgs84(origin, &noisy);
        Self { stamp, frame_id: frame_id.to_string(), latitude, longitude, altitude }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(48 + self.frame_id.len());
        buf.put_slice(&GNSS_MAGIC);
        buf.put_f64_le(self.stamp);
        put_str(&mut buf, &self.frame_id);
        buf.put_f64_le(self.latitude);
        buf.put_f64_le(self.longitude);
        buf.put_f64_le(self.altitude);
        buf
    }

    pub fn decode(mut raw: &[u8]) -> Result<Self, DecodeError> {
        get_magic(&mut raw, GNSS_MAGIC)?;
        Ok(Self {
            stamp: get_f64(&mut raw)?,
            frame_id: get_str(&mut raw)?,
            latitude: get_f64(&mut raw)?,
            longitude: get_f64(&mut raw)?,
            altitude: get_f64(&mut raw)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuSample {
    pub stamp: f64,
    pub frame_id: String,
    /// Quaternion (x, y, z, w) of the body in the world frame.
    pub orientation: [f64; 4],
    pub angular_velocity: Vec3,
    /// Specific force in the body frame: a resting unit reads +g on z.
    pub linear_acceleration: Vec3,
}

fn quaternion(pose: &Pose) -> [f64; 4] {
    let q = UnitQuaternion::from_euler_angles(pose.roll, pose.pitch, pose.yaw);
    [q.i, q.j, q.k, q.w]
}

impl ImuSample {
    pub fn sample(body: &Actor, noise: &ImuParams, rng: &mut ChaCha8Rng, stamp: f64, frame_id: &str) -> Self {
        let to_body = body.pose.rotation().inverse();
        let mut accel = to_body * (body.acceleration + Vec3::new(0.0, 0.0, GRAVITY));
        let mut gyro = to_body * Vec3::new(0.0, 0.0, body.yaw_rate);
        for k in 0..3 {
            accel[k] += gauss(rng, noise.accel_std[k]);
            gyro[k] += gauss(rng, noise.gyro_std[k]);
        }
        Self {
            stamp,
            frame_id: frame_id.to_string(),
            orientation: quaternion(&body.pose),
            angular_velocity: gyro,
            linear_acceleration: accel,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(96 + self.frame_id.len());
        buf.put_slice(&IMU_MAGIC);
        buf.put_f64_le(self.stamp);
        put_str(&mut buf, &self.frame_id);
        for q in self.orientation {
            buf.put_f64_le(q);
        }
        put_vec3(&mut buf, &self.angular_velocity);
        put_vec3(&mut buf, &self.linear_acceleration);
        buf
    }

    pub fn decode(mut raw: &[u8]) -> Result<Self, DecodeError> {
        get_magic(&mut raw, IMU_MAGIC)?;
        let stamp = get_f64(&mut raw)?;
        let frame_id = get_str(&mut raw)?;
        let mut orientation = [0.0; 4];
        for q in &mut orientation {
            *q = get_f64(&mut raw)?;
        }
        Ok(Self {
            stamp,
            frame_id,
            orientation,
            angular_velocity: get_vec3(&mut raw)?,
            linear_acceleration: get_vec3(&mut raw)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Odometry {
    pub stamp: f64,
    pub frame_id: String,
    pub child_frame_id: String,
    pub position: Vec3,
    pub orientation: [f64; 4],
    /// Body-frame twist.
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Odometry {
    pub fn sample(body: &Actor, stamp: f64, child_frame_id: &str) -> Self {
        let to_body = body.pose.rotation().inverse();
        Self {
            stamp,
            frame_id: "map".to_string(),
            child_frame_id: child_frame_id.to_string(),
            position: body.pose.position,
            orientation: quaternion(&body.pose),
            linear: to_body * body.velocity,
            angular: to_body * Vec3::new(0.0, 0.0, body.yaw_rate),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(128 + self.frame_id.len() + self.child_frame_id.len());
        buf.put_slice(&ODOMETRY_MAGIC);
        buf.put_f64_le(self.stamp);
        put_str(&mut buf, &self.frame_id);
        put_str(&mut buf, &self.child_frame_id);
        put_vec3(&mut buf, &self.position);
        for q in self.orientation {
            buf.put_f64_le(q);
        }
        put_vec3(&mut buf, &self.linear);
        put_vec3(&mut buf, &self.angular);
        buf
    }

    pub fn decode(mut raw: &[u8]) -> Result<Self, DecodeError> {
        get_magic(&mut raw, ODOMETRY_MAGIC)?;
        let stamp = get_f64(&mut raw)?;
        let frame_id = get_str(&mut raw)?;
        let child_frame_id = get_str(&mut raw)?;
        let position = get_vec3(&mut raw)?;
        let mut orientation = [0.0; 4];
        for q in &mut orientation {
            *q = get_f64(&mut raw)?;
        }
        Ok(Self {
            stamp,
            frame_id,
            child_frame_id,
            position,
            orientation,
            linear: get_vec3(&mut raw)?,
            angular: get_vec3(&mut raw)?,
        })
    }
}
