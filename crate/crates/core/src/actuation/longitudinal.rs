//! Longitudinal control modes and the throttle-map calibration that backs the
//! PI mode.

use super::{ActuationError, ControlCommand, ControlLimits};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// First-order longitudinal plant: `a = clamp(c1·u − c2·v − c3) + noise`,
/// with `u ∈ [−1, 1]` (negative values brake).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub throttle_gain: f64,
    pub drag: f64,
    pub offset: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub noise_std: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            throttle_gain: 5.0,
            drag: 0.05,
            offset: 0.3,
            accel_min: -3.0,
            accel_max: 3.5,
            noise_std: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LongitudinalPlant {
    params: PlantParams,
    rng: ChaCha8Rng,
}

impl LongitudinalPlant {
    pub fn new(params: PlantParams, seed: u64) -> Self {
        Self { params, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn noiseless_accel(&self, v: f64, throttle: f64) -> f64 {
        let p = &self.params;
        (p.throttle_gain * throttle.clamp(-1.0, 1.0) - p.drag * v - p.offset).clamp(p.accel_min, p.accel_max)
    }

    pub fn accel(&mut self, v: f64, throttle: f64) -> f64 {
        let base = self.noiseless_accel(v, throttle);
        if self.params.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.params.noise_std).expect("finite std");
            base + noise.sample(&mut self.rng)
        } else {
            base
        }
    }
}

/// Linear fit `a(v) = slope·v + intercept` for one held throttle value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrottleFit {
    pub throttle: f64,
    pub slope: f64,
    pub intercept: f64,
    pub residual_std: f64,
}

impl ThrottleFit {
    pub fn accel_at(&self, v: f64) -> f64 {
        self.slope * v + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrottleMap {
    fits: Vec<ThrottleFit>,
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

impl ThrottleMap {
    pub fn new(mut fits: Vec<ThrottleFit>) -> Result<Self, CalibrationError> {
        if fits.len() < 2 {
            return Err(CalibrationError::InsufficientSamples("a map needs at least two throttle fits".into()));
        }
        fits.sort_by(|a, b| a.throttle.total_cmp(&b.throttle));
        Ok(Self { fits })
    }

    pub fn fits(&self) -> &[ThrottleFit] {
        &self.fits
    }

    /// Throttle that yields `target` at speed `v`, interpolating linearly
    /// between neighbouring fits and extrapolating past the ends. The result
    /// is clamped to [−1, 1].
    pub fn invert(&self, v: f64, target: f64) -> f64 {
        let accels: Vec<f64> = self.fits.iter().map(|f| f.accel_at(v)).collect();
        let n = self.fits.len();
        let mut idx = n - 2;
        for i in 0..n - 1 {
            if target <= accels[i + 1] {
                idx = i;
                break;
            }
        }
        let (a0, a1) = (accels[idx], accels[idx + 1]);
        let (u0, u1) = (self.fits[idx].throttle, self.fits[idx + 1].throttle);
        let u = if (a1 - a0).abs() < 1e-12 {
            u0
        } else {
            u0 + (target - a0) * (u1 - u0) / (a1 - a0)
        };
        u.clamp(-1.0, 1.0)
    }
}

/// Holds each throttle at each grid speed, averages `window` samples over
/// `runs` repetitions and least-squares fits acceleration against speed.
pub fn calibrate_throttle_map(
    plant: &mut LongitudinalPlant,
    throttles: &[f64],
    v_grid: &[f64],
    runs: usize,
    window: usize,
) -> Result<ThrottleMap, CalibrationError> {
    if throttles.is_empty() {
        return Err(CalibrationError::InsufficientSamples("no throttle values".into()));
    }
    if v_grid.len() < 2 {
        return Err(CalibrationError::InsufficientSamples("speed grid needs two points".into()));
    }
    if runs == 0 || window == 0 {
        return Err(CalibrationError::InsufficientSamples("zero runs or empty window".into()));
    }
    let mut fits = Vec::with_capacity(throttles.len());
    for &throttle in throttles {
        let means: Vec<f64> = v_grid
            .iter()
            .map(|&v| {
                let total: f64 = (0..runs * window).map(|_| plant.accel(v, throttle)).sum();
                total / (runs * window) as f64
            })
            .collect();
        let n = v_grid.len() as f64;
        let mean_v = v_grid.iter().sum::<f64>() / n;
        let mean_a = means.iter().sum::<f64>() / n;
        let sxx: f64 = v_grid.iter().map(|v| (v - mean_v).powi(2)).sum();
        let sxy: f64 = v_grid.iter().zip(&means).map(|(v, a)| (v - mean_v) * (a - mean_a)).sum();
        if sxx == 0.0 {
            return Err(CalibrationError::InsufficientSamples("speed grid has no spread".into()));
        }
        let slope = sxy / sxx;
        let intercept = mean_a - slope * mean_v;
        let sse: f64 = v_grid
            .iter()
            .zip(&means)
            .map(|(v, a)| (a - (slope * v + intercept)).powi(2))
            .sum();
        let residual_std = if v_grid.len() > 2 { (sse / (n - 2.0)).sqrt() } else { 0.0 };
        fits.push(ThrottleFit { throttle, slope, intercept, residual_std });
    }
    ThrottleMap::new(fits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LongitudinalMode {
    /// Internal speed target integrates the commanded acceleration; the
    /// vehicle follows it with a first-order lag of time constant `tau`.
    AckermannVelocity { tau: f64 },
    /// Feed-forward through an inverted throttle map with a PI correction on
    /// the measured acceleration, driving an internal plant.
    ThrottleMapPi { kp: f64, ki: f64, map: ThrottleMap, plant: PlantParams, seed: u64 },
    /// `v' = v + a·dt`.
    AccelIntegration,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LongitudinalState {
    /// Speed along the current gear direction, never negative.
    pub speed: f64,
    pub applied_accel: f64,
    pub throttle: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LongitudinalController {
    mode: LongitudinalMode,
    limits: ControlLimits,
    state: LongitudinalState,
    target_speed: f64,
    integrator: f64,
    plant: Option<LongitudinalPlant>,
}

impl LongitudinalController {
    pub fn new(mode: LongitudinalMode, limits: ControlLimits) -> Result<Self, ActuationError> {
        limits.validate()?;
        let plant = match &mode {
            LongitudinalMode::AckermannVelocity { tau } if !(*tau > 0.0) => {
                return Err(ActuationError::Config(format!("tau {tau} must be > 0")));
            }
            LongitudinalMode::ThrottleMapPi { plant, seed, .. } => Some(LongitudinalPlant::new(*plant, *seed)),
            _ => None,
        };
        Ok(Self { mode, limits, state: LongitudinalState::default(), target_speed: 0.0, integrator: 0.0, plant })
    }

    pub fn mode(&self) -> &LongitudinalMode {
        &self.mode
    }

    pub fn state(&self) -> LongitudinalState {
        self.state
    }

    /// Resets speed and internal targets, e.g. after a gear change.
    pub fn reset(&mut self, speed: f64) {
        self.state = LongitudinalState { speed: speed.max(0.0), ..Default::default() };
        self.target_speed = speed.max(0.0);
        self.integrator = 0.0;
    }

    pub fn step(&mut self, cmd: &ControlCommand, dt: f64) -> Result<LongitudinalState, ActuationError> {
        if !cmd.is_finite() {
            return Err(ActuationError::NonFiniteCommand);
        }
        if !self.limits.contains(cmd) {
            return Err(ActuationError::UnfilteredCommand(format!(
                "steer {} accel {}",
                cmd.target_steer, cmd.target_accel
            )));
        }
        let v = self.state.speed;
        let target = cmd.target_accel;
        let (next, applied, throttle) = match &self.mode {
            LongitudinalMode::AccelIntegration => (v + target * dt, target, None),
            LongitudinalMode::AckermannVelocity { tau } => {
                self.target_speed = (self.target_speed + target * dt).max(0.0);
                let next = self.target_speed + (v - self.target_speed) * (-dt / tau).exp();
                (next, (next - v) / dt, None)
            }
            LongitudinalMode::ThrottleMapPi { kp, ki, map, .. } => {
                let error = target - self.state.applied_accel;
                self.integrator = (self.integrator + ki * error * dt).clamp(self.limits.accel_min, self.limits.accel_max);
                let corrected = target + kp * error + self.integrator;
                let throttle = map.invert(v, corrected);
                let plant = self.plant.as_mut().expect("plant exists in PI mode");
                let a = plant.accel(v, throttle);
                (v + a * dt, a, Some(throttle))
            }
        };
        let speed = next.max(0.0);
        let applied_accel = if next < 0.0 { (speed - v) / dt } else { applied };
        self.state = LongitudinalState { speed, applied_accel, throttle };
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn throttles() -> Vec<f64> {
        (-4..=4).map(|i| i as f64 * 0.25).collect()
    }

    fn speeds() -> Vec<f64> {
        (0..=10).map(|i| i as f64 * 2.0).collect()
    }

    #[test]
    fn accel_integration_is_exact_for_constant_input() {
        let mut ctl = LongitudinalController::new(LongitudinalMode::AccelIntegration, ControlLimits::default()).unwrap();
        for _ in 0..100 {
            ctl.step(&ControlCommand::new(0.0, 1.0, 0.0), 0.05).unwrap();
        }
        assert!((ctl.state().speed - 5.0).abs() < 1e-12);
    }

    #[test]
    fn speed_never_goes_negative() {
        let mut ctl = LongitudinalController::new(LongitudinalMode::AccelIntegration, ControlLimits::default()).unwrap();
        ctl.reset(0.1);
        let s = ctl.step(&ControlCommand::new(0.0, -3.0, 0.0), 0.05).unwrap();
        assert_eq!(s.speed, 0.0);
        assert!((s.applied_accel + 2.0).abs() < 1e-12);
    }

    #[test]
    fn unfiltered_commands_are_refused() {
        let mut ctl = LongitudinalController::new(LongitudinalMode::AccelIntegration, ControlLimits::default()).unwrap();
        assert!(matches!(
            ctl.step(&ControlCommand::new(0.0, 4.0, 0.0), 0.05),
            Err(ActuationError::UnfilteredCommand(_))
        ));
    }

    #[test]
    fn ackermann_velocity_lags_with_time_constant() {
        let tau = 0.5;
        let mut ctl =
            LongitudinalController::new(LongitudinalMode::AckermannVelocity { tau }, ControlLimits::default()).unwrap();
        // Two seconds of 1 m/s² then hold: target speed settles at 2 m/s.
        let dt = 0.01;
        for _ in 0..200 {
            ctl.step(&ControlCommand::new(0.0, 1.0, 0.0), dt).unwrap();
        }
        let v_at_2 = ctl.state().speed;
        for _ in 0..100 {
            ctl.step(&ControlCommand::new(0.0, 0.0, 0.0), dt).unwrap();
        }
        // Ramp response of a first-order lag: v(t) = t − τ(1 − e^{−t/τ}), then
        // the remaining gap decays by e^{−1/τ} over the next second.
        let oracle_2 = 2.0 - tau * (1.0 - (-2.0f64 / tau).exp());
        assert!((v_at_2 - oracle_2).abs() < 0.01, "{v_at_2} vs {oracle_2}");
        let oracle_3 = 2.0 - (2.0 - oracle_2) * (-1.0f64 / tau).exp();
        assert!((ctl.state().speed - oracle_3).abs() < 0.01);
    }

    #[test]
    fn noiseless_calibration_recovers_plant_coefficients() {
        let params = PlantParams { noise_std: 0.0, ..Default::default() };
        let mut plant = LongitudinalPlant::new(params, 1);
        // Keep throttles where the plant stays unclamped across the grid.
        let throttles = [0.0, 0.2, 0.4, 0.6];
        let map = calibrate_throttle_map(&mut plant, &throttles, &speeds(), 1, 5).unwrap();
        for fit in map.fits() {
            assert!((fit.slope + params.drag).abs() < 1e-6);
            let oracle = params.throttle_gain * fit.throttle - params.offset;
            assert!((fit.intercept - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn noisy_calibration_residual_shrinks_with_runs() {
        let params = PlantParams::default();
        let runs = 16;
        let window = 25;
        let mut plant = LongitudinalPlant::new(params, 9);
        let map = calibrate_throttle_map(&mut plant, &[0.2, 0.4], &speeds(), runs, window).unwrap();
        let bound = params.noise_std / ((runs * window) as f64).sqrt();
        for fit in map.fits() {
            assert!(fit.residual_std <= 2.0 * bound, "{} > {}", fit.residual_std, bound);
        }
    }

    #[test]
    fn calibration_rejects_empty_inputs() {
        let mut plant = LongitudinalPlant::new(PlantParams::default(), 1);
        assert!(calibrate_throttle_map(&mut plant, &[], &speeds(), 1, 1).is_err());
        assert!(calibrate_throttle_map(&mut plant, &[0.1], &[1.0], 1, 1).is_err());
        assert!(calibrate_throttle_map(&mut plant, &[0.1], &speeds(), 0, 1).is_err());
    }

    #[test]
    fn inverted_map_reproduces_fitted_acceleration() {
        let params = PlantParams { noise_std: 0.0, ..Default::default() };
        let mut plant = LongitudinalPlant::new(params, 1);
        let map = calibrate_throttle_map(&mut plant, &[0.0, 0.2, 0.4, 0.6], &speeds(), 1, 1).unwrap();
        for target in [-0.5, 0.0, 0.7, 1.5] {
            let u = map.invert(5.0, target);
            assert!((plant.noiseless_accel(5.0, u) - target).abs() < 1e-9);
        }
    }

    fn pi_mode(map: ThrottleMap, plant: PlantParams) -> LongitudinalMode {
        LongitudinalMode::ThrottleMapPi { kp: 0.5, ki: 0.1, map, plant, seed: 42 }
    }

    #[test]
    fn pi_tracks_constant_target_on_noisy_plant() {
        let truth = PlantParams::default();
        let mut calib_plant = LongitudinalPlant::new(truth, 3);
        let map = calibrate_throttle_map(&mut calib_plant, &throttles(), &speeds(), 8, 25).unwrap();
        let mut ctl = LongitudinalController::new(pi_mode(map, truth), ControlLimits::default()).unwrap();
        let dt = 0.05;
        let target = 1.0;
        let mut errors = Vec::new();
        for k in 0..100 {
            let s = ctl.step(&ControlCommand::new(0.0, target, 0.0), dt).unwrap();
            let t = (k + 1) as f64 * dt;
            if t >= 3.0 {
                // Judge the noiseless plant response to the chosen throttle.
                let v_before = s.speed - s.applied_accel * dt;
                let a = LongitudinalPlant::new(truth, 0).noiseless_accel(v_before, s.throttle.unwrap());
                errors.push(a - target);
            }
        }
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        assert!(mean.abs() < 0.1, "mean steady-state error {mean}");
    }

    #[test]
    fn pi_integrator_reduces_map_bias() {
        // Map calibrated against a plant whose offset is 0.4 m/s² too high.
        let calib = PlantParams { noise_std: 0.0, offset: 0.7, ..Default::default() };
        let mut calib_plant = LongitudinalPlant::new(calib, 3);
        let map = calibrate_throttle_map(&mut calib_plant, &throttles(), &speeds(), 1, 1).unwrap();
        let truth = PlantParams { noise_std: 0.0, ..Default::default() };
        let mut ctl = LongitudinalController::new(pi_mode(map, truth), ControlLimits::default()).unwrap();
        ctl.reset(5.0);
        let mut errors = Vec::new();
        for _ in 0..400 {
            let s = ctl.step(&ControlCommand::new(0.0, 0.5, 0.0), 0.05).unwrap();
            errors.push((s.applied_accel - 0.5).abs());
        }
        let first = errors[5];
        let last = *errors.last().unwrap();
        assert!(last < 0.5 * first, "bias {first} -> {last}");
    }

    #[test]
    fn inverted_throttle_is_monotone_in_target() {
        let mut plant = LongitudinalPlant::new(PlantParams::default(), 5);
        let map = calibrate_throttle_map(&mut plant, &throttles(), &speeds(), 4, 25).unwrap();
        for v in [0.0, 5.0, 12.0, 20.0] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=65 {
                let target = -3.0 + i as f64 * 0.1;
                let u = map.invert(v, target);
                assert!(u >= prev, "v {v} target {target}");
                prev = u;
            }
        }
    }

    proptest! {
        #[test]
        fn accel_integration_matches_analytic_integral(
            segments in prop::collection::vec((-3.0f64..3.5, 1usize..40), 1..20)
        ) {
            let dt = 0.05;
            let mut ctl = LongitudinalController::new(LongitudinalMode::AccelIntegration, ControlLimits::default()).unwrap();
            ctl.reset(1000.0);
            let mut analytic = 1000.0;
            let mut steps = 0usize;
            for (a, n) in &segments {
                for _ in 0..*n {
                    ctl.step(&ControlCommand::new(0.0, *a, 0.0), dt).unwrap();
                }
                analytic += a * (*n as f64) * dt;
                steps += n;
            }
            let ulp = f64::EPSILON * 1100.0;
            prop_assert!((ctl.state().speed - analytic).abs() <= ulp * (steps as f64 + 1.0));
        }
    }
}
