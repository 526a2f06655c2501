use super::{
    calibrate_throttle_map, filter_command, ActuationError, ControlCommand, ControlLimits,
    LongitudinalController, LongitudinalMode, LongitudinalPlant, PlantParams,
};
use crate::codec::{get_f64, get_u8, DecodeError};
use crate::world::{Actor, EgoController, EgoMotion};
use bytes::BufMut;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::{Arc, Mutex};

/// Below this speed a pending gear change is engaged.
const GEAR_SWITCH_SPEED: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gear {
    #[default]
    Drive,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicators {
    #[default]
    Off,
    Left,
    Right,
    Hazard,
}

impl Indicators {
    fn code(self) -> u8 {
        match self {
            Indicators::Off => 0,
            Indicators::Left => 1,
            Indicators::Right => 2,
            Indicators::Hazard => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self, DecodeError> {
        Ok(match code {
            0 => Indicators::Off,
            1 => Indicators::Left,
            2 => Indicators::Right,
            3 => Indicators::Hazard,
            other => return Err(DecodeError::Invalid { field: "indicators", value: other as u64 }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleStatus {
    pub steer_angle: f64,
    /// Signed: negative while reversing.
    pub longitudinal_velocity: f64,
    pub heading_rate: f64,
    pub gear: Gear,
    pub indicators: Indicators,
    pub stamp: f64,
}

impl VehicleStatus {
    /// stamp f64, steer f64.
    pub fn encode_steering(&self, stamp: f64) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16);
        buf.put_f64_le(stamp);
        buf.put_f64_le(self.steer_angle);
        buf
    }

    /// stamp f64, gear u8 (0 drive, 1 reverse), indicators u8.
    pub fn encode_gear(&self, stamp: f64) -> Vec<u8> {
        let mut buf = Vec::with_capacity(10);
        buf.put_f64_le(stamp);
        buf.put_u8(match self.gear {
            Gear::Drive => 0,
            Gear::Reverse => 1,
        });
        buf.put_u8(self.indicators.code());
        buf
    }

    /// stamp f64, longitudinal velocity f64, heading rate f64.
    pub fn encode_velocity(&self, stamp: f64) -> Vec<u8> {
        let mut buf = Vec::with_capacity(24);
        buf.put_f64_le(stamp);
        buf.put_f64_le(self.longitudinal_velocity);
        buf.put_f64_le(self.heading_rate);
        buf
    }

    pub fn decode_steering(mut raw: &[u8]) -> Result<(f64, f64), DecodeError> {
        Ok((get_f64(&mut raw)?, get_f64(&mut raw)?))
    }

    pub fn decode_gear(mut raw: &[u8]) -> Result<(f64, Gear, Indicators), DecodeError> {
        let stamp = get_f64(&mut raw)?;
        let gear = match get_u8(&mut raw)? {
            0 => Gear::Drive,
            1 => Gear::Reverse,
            other => return Err(DecodeError::Invalid { field: "gear", value: other as u64 }),
        };
        Ok((stamp, gear, Indicators::from_code(get_u8(&mut raw)?)?))
    }

    pub fn decode_velocity(mut raw: &[u8]) -> Result<(f64, f64, f64), DecodeError> {
        Ok((get_f64(&mut raw)?, get_f64(&mut raw)?, get_f64(&mut raw)?))
    }
}

/// Status plus the command that produced it, for the debug stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleReport {
    pub status: VehicleStatus,
    pub raw_command: Option<ControlCommand>,
    pub executed_command: ControlCommand,
    pub applied_accel: f64,
    pub pending_gear: Option<Gear>,
    pub rejected_commands: u64,
}

/// Latest vehicle report, shared between the tick thread and status
/// publishers.
#[derive(Debug, Clone, Default)]
pub struct StatusCell(Arc<Mutex<Option<VehicleReport>>>);

impl StatusCell {
    pub fn latest(&self) -> Result<VehicleReport, ActuationError> {
        self.0.lock().unwrap().ok_or(ActuationError::NoEgo)
    }

    fn store(&self, report: VehicleReport) {
        *self.0.lock().unwrap() = Some(report);
    }

    pub fn clear(&self) {
        *self.0.lock().unwrap() = None;
    }
}

#[derive(Debug, Default)]
struct Inbox {
    command: Option<ControlCommand>,
    indicators: Option<Indicators>,
    gear: Option<Gear>,
    rejected: u64,
}

/// Thread-safe entry point for commands; the latest command wins at the next
/// tick.
#[derive(Debug, Clone, Default)]
pub struct ControlMailbox(Arc<Mutex<Inbox>>);

impl ControlMailbox {
    pub fn submit(&self, cmd: ControlCommand) -> Result<(), ActuationError> {
        let mut inbox = self.0.lock().unwrap();
        if !cmd.is_finite() {
            inbox.rejected += 1;
            return Err(ActuationError::NonFiniteCommand);
        }
        if let Some(gear) = cmd.mode_hint {
            inbox.gear = Some(gear);
        }
        inbox.command = Some(cmd);
        Ok(())
    }

    pub fn set_indicators(&self, indicators: Indicators) {
        self.0.lock().unwrap().indicators = Some(indicators);
    }

    pub fn request_gear(&self, gear: Gear) {
        self.0.lock().unwrap().gear = Some(gear);
    }

    fn drain(&self) -> Inbox {
        let mut inbox = self.0.lock().unwrap();
        let rejected = inbox.rejected;
        let taken = std::mem::take(&mut *inbox);
        inbox.rejected = rejected;
        taken
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    AckermannVelocity,
    ThrottleMapPi,
    #[default]
    AccelIntegration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self { kp: 0.5, ki: 0.1 }
    }
}

/// Actuation settings, loadable from YAML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuationConfig {
    pub mode: ModeName,
    #[serde(flatten)]
    pub limits: ControlLimits,
    pub wheelbase: f64,
    pub tau: f64,
    pub pi: PiGains,
    pub plant: PlantParams,
    pub seed: u64,
}

impl Default for ActuationConfig {
    fn default() -> Self {
        Self {
            mode: ModeName::default(),
            limits: ControlLimits::default(),
            wheelbase: 3.2,
            tau: 0.5,
            pi: PiGains::default(),
            plant: PlantParams::default(),
            seed: 0,
        }
    }
}

impl ActuationConfig {
    pub fn from_yaml(text: &str) -> Result<Self, ActuationError> {
        let cfg: Self = serde_yaml::from_str(text).map_err(|e| ActuationError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ActuationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ActuationError::Config(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    pub fn validate(&self) -> Result<(), ActuationError> {
        self.limits.validate()?;
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            return Err(ActuationError::Config(format!("wheelbase {} must be > 0", self.wheelbase)));
        }
        Ok(())
    }

    /// Builds the longitudinal controller. The PI mode calibrates its
    /// throttle map against the configured plant first.
    pub fn controller(&self) -> Result<LongitudinalController, ActuationError> {
        let mode = match self.mode {
            ModeName::AccelIntegration => LongitudinalMode::AccelIntegration,
            ModeName::AckermannVelocity => LongitudinalMode::AckermannVelocity { tau: self.tau },
            ModeName::ThrottleMapPi => {
                let mut plant = LongitudinalPlant::new(self.plant, self.seed ^ 0x5eed);
                let throttles: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.25).collect();
                let speeds: Vec<f64> = (0..=10).map(|i| i as f64 * 2.0).collect();
                let map = calibrate_throttle_map(&mut plant, &throttles, &speeds, 8, 25)
                    .map_err(|e| ActuationError::Config(e.to_string()))?;
                LongitudinalMode::ThrottleMapPi {
                    kp: self.pi.kp,
                    ki: self.pi.ki,
                    map,
                    plant: self.plant,
                    seed: self.seed,
                }
            }
        };
        LongitudinalController::new(mode, self.limits)
    }
}

/// Ego controller: filters the latest command, runs the longitudinal mode
/// and a kinematic bicycle for yaw, and publishes a report every tick.
pub struct VehicleInterface {
    config: ActuationConfig,
    longitudinal: LongitudinalController,
    mailbox: ControlMailbox,
    status: StatusCell,
    gear: Gear,
    pending_gear: Option<Gear>,
    indicators: Indicators,
    raw_command: Option<ControlCommand>,
    executed: ControlCommand,
    initialized: bool,
}

impl VehicleInterface {
    pub fn new(config: ActuationConfig) -> Result<Self, ActuationError> {
        config.validate()?;
        let longitudinal = config.controller()?;
        Ok(Self {
            config,
            longitudinal,
            mailbox: ControlMailbox::default(),
            status: StatusCell::default(),
            gear: Gear::Drive,
            pending_gear: None,
            indicators: Indicators::Off,
            raw_command: None,
            executed: ControlCommand::new(0.0, 0.0, 0.0),
            initialized: false,
        })
    }

    pub fn mailbox(&self) -> ControlMailbox {
        self.mailbox.clone()
    }

    pub fn status_cell(&self) -> StatusCell {
        self.status.clone()
    }

    pub fn config(&self) -> &ActuationConfig {
        &self.config
    }
}

impl EgoController for VehicleInterface {
    fn step(&mut self, ego: &Actor, dt: f64, sim_time: f64) -> EgoMotion {
        if !self.initialized {
            let forward = ego.velocity.x * ego.pose.yaw.cos() + ego.velocity.y * ego.pose.yaw.sin();
            if forward < 0.0 {
                self.gear = Gear::Reverse;
            }
            self.longitudinal.reset(forward.abs());
            self.initialized = true;
        }
        let inbox = self.mailbox.drain();
        if let Some(cmd) = inbox.command {
            self.raw_command = Some(cmd);
            match filter_command(&cmd, &self.config.limits) {
                Ok(filtered) => self.executed = filtered,
                Err(e) => log::warn!("dropping control command: {e}"),
            }
        }
        if let Some(ind) = inbox.indicators {
            self.indicators = ind;
        }
        if let Some(gear) = inbox.gear {
            self.pending_gear = (gear != self.gear).then_some(gear);
        }
        if let Some(gear) = self.pending_gear {
            if self.longitudinal.state().speed < GEAR_SWITCH_SPEED {
                self.gear = gear;
                self.pending_gear = None;
                self.longitudinal.reset(0.0);
            }
        }

        let state = self
            .longitudinal
            .step(&self.executed, dt)
            .expect("filtered commands are within limits");
        let sign = match self.gear {
            Gear::Drive => 1.0,
            Gear::Reverse => -1.0,
        };
        let speed = sign * state.speed;
        let steer = self.executed.target_steer;
        let yaw_rate = speed * steer.tan() / self.config.wheelbase;

        self.status.store(VehicleReport {
            status: VehicleStatus {
                steer_angle: steer,
                longitudinal_velocity: speed,
                heading_rate: yaw_rate,
                gear: self.gear,
                indicators: self.indicators,
                stamp: sim_time + dt,
            },
            raw_command: self.raw_command,
            executed_command: self.executed,
            applied_accel: sign * state.applied_accel,
            pending_gear: self.pending_gear,
            rejected_commands: inbox.rejected,
        });
        EgoMotion { speed, yaw_rate }
    }
}
