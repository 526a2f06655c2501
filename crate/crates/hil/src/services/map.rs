//! Map service: generates the point-cloud map once the road and the static
//! props are known, then serves it on a latched topic.

use super::{ServiceContext, ServiceError};
use crate::pcmap::{encode_map, map_points};
use crate::topics;
use hil_transport::Qos;

pub(super) fn run(ctx: &ServiceContext) -> Result<(), ServiceError> {
    let Some(road) = ctx.road_network()? else { return Ok(()) };
    let frames = ctx.bus.subscribe(topics::FRAME, Qos::BestEffort(1))?;
    let Some((snapshot, _)) = ctx.next_frame(&frames)? else { return Ok(()) };
    drop(frames);
    let points = map_points(&road, &snapshot, ctx.options.grid_step)?;
    let raw = encode_map(&points);
    if let Some(path) = &ctx.options.map_out {
        std::fs::write(path, &raw).map_err(crate::pcmap::PcMapError::Io)?;
        log::info!("wrote {} map points to {}", points.len(), path.display());
    }
    let out = ctx.bus.advertise(topics::latched(topics::POINTCLOUD_MAP))?;
    out.publish(snapshot.sim_time, raw)?;
    while !ctx.should_stop() {
        std::thread::sleep(super::POLL);
    }
    Ok(())
}
