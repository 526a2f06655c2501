//! Ground-truth publisher: detected, tracked and predicted objects straight
//! from the world frames.

use super::{ServiceContext, ServiceError};
use crate::topics;
use hil_core::groundtruth::{
    detected_objects, encode_detected, encode_predicted, encode_tracked, predicted_objects, Tracker,
};
use hil_transport::Qos;

pub(super) fn run(ctx: &ServiceContext) -> Result<(), ServiceError> {
    let config = ctx.options.groundtruth;
    config.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
    let Some(road) = ctx.road_network()? else { return Ok(()) };
    let frames = ctx.bus.subscribe(topics::FRAME, Qos::BestEffort(8))?;
    let detected = ctx.bus.advertise(topics::sensor(topics::DETECTED_OBJECTS))?;
    let tracked = ctx.bus.advertise(topics::sensor(topics::TRACKED_OBJECTS))?;
    let predicted = ctx.bus.advertise(topics::sensor(topics::PREDICTED_OBJECTS))?;
    let mut tracker = Tracker::new(config);
    while let Some((snapshot, plans)) = ctx.next_frame(&frames)? {
        let stamp = snapshot.sim_time;
        detected.publish(stamp, encode_detected(stamp, &detected_objects(&snapshot)))?;
        match tracker.update(&snapshot) {
            Ok(tracks) => tracked.publish(stamp, encode_tracked(stamp, &tracks))?,
            Err(e) => {
                log::warn!("tracker reset: {e}");
                tracker = Tracker::new(config);
            }
        }
        let paths = predicted_objects(&snapshot, &road, &plans, &config);
        predicted.publish(stamp, encode_predicted(stamp, &paths))?;
    }
    Ok(())
}
