//! Scenario configurator: turns scenario state updates into the latched
//! weather topic. Edits themselves go through the server's control handler.

use super::{ServiceContext, ServiceError};
use crate::topics;
use hil_transport::Qos;

pub(super) fn run(ctx: &ServiceContext) -> Result<(), ServiceError> {
    let states = ctx.bus.subscribe(topics::SCENARIO_STATE, Qos::Reliable(4))?;
    let weather = ctx.bus.advertise(topics::latched(topics::WEATHER))?;
    let mut published: Option<u64> = None;
    while let Some(env) = ctx.wait(&states)? {
        let state: serde_json::Value = match serde_json::from_slice(&env.payload) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("bad scenario state: {e}");
                continue;
            }
        };
        let revision = state["weather_revision"].as_u64();
        if revision.is_some() && revision == published {
            continue;
        }
        let body = serde_json::to_vec(&state["config"]["weather"]).expect("json value serializes");
        weather.publish(env.stamp, body)?;
        published = revision;
    }
    Ok(())
}
