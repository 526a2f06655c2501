//! Vehicle interface: relays control commands to the ego and publishes the
//! steering, gear and velocity status at 50 Hz.

use super::{ServiceContext, ServiceError, POLL};
use crate::topics;
use hil_core::actuation::{ControlCommand, StatusEmitter, VehicleReport, STATUS_PERIOD};
use hil_core::TickMode;
use hil_transport::{AnyPublisher, Qos};
use std::time::{Duration, Instant};

struct StatusPublishers {
    steering: AnyPublisher,
    gear: AnyPublisher,
    velocity: AnyPublisher,
}

impl StatusPublishers {
    fn publish(&self, report: &VehicleReport, stamp: f64) {
        let s = &report.status;
        for (publisher, payload) in [
            (&self.steering, s.encode_steering(stamp)),
            (&self.gear, s.encode_gear(stamp)),
            (&self.velocity, s.encode_velocity(stamp)),
        ] {
            if let Err(e) = publisher.publish(stamp, payload) {
                log::debug!("status publish: {e}");
            }
        }
    }
}

pub(super) fn run(ctx: &ServiceContext) -> Result<(), ServiceError> {
    let commands = ctx.bus.subscribe(topics::CONTROL_CMD, Qos::control())?;
    let ego_command = ctx.bus.advertise(topics::ego_command())?;
    let reports = ctx.bus.subscribe(topics::VEHICLE_REPORT, Qos::BestEffort(4))?;
    let status = StatusPublishers {
        steering: ctx.bus.advertise(topics::status(topics::STEERING_STATUS))?,
        gear: ctx.bus.advertise(topics::status(topics::GEAR_STATUS))?,
        velocity: ctx.bus.advertise(topics::status(topics::VELOCITY_STATUS))?,
    };
    let fast = ctx.session.mode == crate::config::mode_name(TickMode::SyncFast);

    std::thread::scope(|scope| {
        let relay = scope.spawn(|| -> Result<(), ServiceError> {
            while let Some(env) = ctx.wait(&commands)? {
                match ControlCommand::decode(&env.payload) {
                    Ok(_) => ego_command.publish(env.stamp, env.payload)?,
                    Err(e) => log::warn!("dropping undecodable control command: {e}"),
                }
            }
            Ok(())
        });
        let result = if fast { status_per_frame(ctx, &reports, &status) } else { status_wall_clock(ctx, &reports, &status) };
        let relayed = relay.join().unwrap_or_else(|p| std::panic::resume_unwind(p));
        result.and(relayed)
    })
}

fn decode_report(payload: &[u8]) -> Option<VehicleReport> {
    serde_json::from_slice(payload).map_err(|e| log::warn!("bad vehicle report: {e}")).ok()
}

/// Free-running simulation: status follows the sim-time grid, however fast
/// frames arrive.
fn status_per_frame(
    ctx: &ServiceContext,
    reports: &hil_transport::Subscription,
    status: &StatusPublishers,
) -> Result<(), ServiceError> {
    let mut emitter = StatusEmitter::new(STATUS_PERIOD);
    while let Some(env) = ctx.wait(reports)? {
        if let Some(report) = decode_report(&env.payload) {
            for stamp in emitter.due(report.status.stamp) {
                status.publish(&report, stamp);
            }
        }
    }
    Ok(())
}

/// Real-time and async runs: a 50 Hz wall-clock timer, stamps extrapolated
/// from the latest report.
fn status_wall_clock(
    ctx: &ServiceContext,
    reports: &hil_transport::Subscription,
    status: &StatusPublishers,
) -> Result<(), ServiceError> {
    let period = Duration::from_secs_f64(STATUS_PERIOD);
    let mut latest: Option<(VehicleReport, Instant)> = None;
    let mut next = Instant::now();
    let mut last_stamp = f64::NEG_INFINITY;
    while !ctx.should_stop() {
        while let Some(env) = reports.try_recv() {
            if let Some(r) = decode_report(&env.payload) {
                latest = Some((r, Instant::now()));
            }
        }
        let now = Instant::now();
        if now < next {
            std::thread::sleep((next - now).min(POLL));
            continue;
        }
        next += period;
        if now > next + period * 5 {
            // Fell far behind (suspended); resume on a fresh grid.
            next = now + period;
        }
        if let Some((report, at)) = &latest {
            let stamp = (report.status.stamp + at.elapsed().as_secs_f64()).max(last_stamp + 1e-6);
            last_stamp = stamp;
            status.publish(report, stamp);
        }
    }
    Ok(())
}
