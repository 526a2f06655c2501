//! Vehicle actuation interface.
//!
//! Incoming commands are clamped to the vehicle limits, turned into
//! longitudinal motion by one of three interchangeable modes, steered with a
//! kinematic bicycle model and reported back as vehicle status records.

mod longitudinal;
mod status;
mod vehicle;

pub use longitudinal::{
    calibrate_throttle_map, CalibrationError, LongitudinalController, LongitudinalMode,
    LongitudinalPlant, LongitudinalState, PlantParams, ThrottleFit, ThrottleMap,
};
pub use status::{StatusEmitter, STATUS_PERIOD};
pub use vehicle::{
    ActuationConfig, ControlMailbox, Gear, Indicators, ModeName, PiGains, StatusCell, VehicleInterface,
    VehicleReport, VehicleStatus,
};

use crate::codec::{get_f64, get_u8, DecodeError};
use bytes::BufMut;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ActuationError {
    #[error("command contains non-finite values")]
    NonFiniteCommand,
    #[error("command outside limits: {0}")]
    UnfilteredCommand(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("no ego vehicle")]
    NoEgo,
    #[error("invalid actuation config: {0}")]
    Config(String),
}

/// Ackermann-style control input: front-axle steering angle and signed
/// longitudinal acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub target_steer: f64,
    pub target_accel: f64,
    pub stamp: f64,
    #[serde(default)]
    pub mode_hint: Option<Gear>,
}

impl ControlCommand {
    pub fn new(target_steer: f64, target_accel: f64, stamp: f64) -> Self {
        Self { target_steer, target_accel, stamp, mode_hint: None }
    }

    pub fn is_finite(&self) -> bool {
        self.target_steer.is_finite() && self.target_accel.is_finite() && self.stamp.is_finite()
    }

    /// Wire layout: stamp f64, steer f64, accel f64, gear hint u8
    /// (0 none, 1 drive, 2 reverse), little-endian, 25 bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(25);
        buf.put_f64_le(self.stamp);
        buf.put_f64_le(self.target_steer);
        buf.put_f64_le(self.target_accel);
        buf.put_u8(match self.mode_hint {
            None => 0,
            Some(Gear::Drive) => 1,
            Some(Gear::Reverse) => 2,
        });
        buf
    }

    pub fn decode(mut raw: &[u8]) -> Result<Self, DecodeError> {
        let stamp = get_f64(&mut raw)?;
        let target_steer = get_f64(&mut raw)?;
        let target_accel = get_f64(&mut raw)?;
        let mode_hint = match get_u8(&mut raw)? {
            0 => None,
            1 => Some(Gear::Drive),
            2 => Some(Gear::Reverse),
            other => return Err(DecodeError::Invalid { field: "gear hint", value: other as u64 }),
        };
        Ok(Self { target_steer, target_accel, stamp, mode_hint })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlLimits {
    /// Front-axle angle limit, radians. The 0.61 default is a stand-in, not
    /// a measured vehicle value.
    pub max_steer: f64,
    pub accel_min: f64,
    pub accel_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self { max_steer: 0.61, accel_min: -3.0, accel_max: 3.5 }
    }
}

impl ControlLimits {
    pub fn validate(&self) -> Result<(), ActuationError> {
        if !(self.max_steer > 0.0 && self.max_steer.is_finite()) {
            return Err(ActuationError::InvalidLimits(format!("max_steer {} must be > 0", self.max_steer)));
        }
        if !(self.accel_min < 0.0 && 0.0 < self.accel_max && self.accel_max.is_finite() && self.accel_min.is_finite()) {
            return Err(ActuationError::InvalidLimits(format!(
                "acceleration range [{}, {}] must bracket zero",
                self.accel_min, self.accel_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, cmd: &ControlCommand) -> bool {
        cmd.target_steer.abs() <= self.max_steer
            && (self.accel_min..=self.accel_max).contains(&cmd.target_accel)
    }
}

/// Clamps steering and acceleration into `limits`; the stamp is preserved.
pub fn filter_command(cmd: &ControlCommand, limits: &ControlLimits) -> Result<ControlCommand, ActuationError> {
    limits.validate()?;
    if !cmd.is_finite() {
        return Err(ActuationError::NonFiniteCommand);
    }
    Ok(ControlCommand {
        target_steer: cmd.target_steer.clamp(-limits.max_steer, limits.max_steer),
        target_accel: cmd.target_accel.clamp(limits.accel_min, limits.accel_max),
        ..*cmd
    })
}
