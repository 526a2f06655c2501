//! Sensor interface: builds the sensor kit from the server's configuration
//! and runs every mounted sensor on its own thread.

use super::{ServiceContext, ServiceError};
use crate::topics;
use hil_core::sensors::{build_sensor_kit, parse_sensor_mounts, parse_sensor_types, resolve_specs, SensorKind, SensorNode, SensorSpec};
use hil_core::frame::decode_frame;
use hil_transport::{AnyPublisher, Qos};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

fn specs_from_state(state: &Value) -> Result<Vec<SensorSpec>, ServiceError> {
    let cfg = &state["sensor_config"];
    let text = |key: &str| {
        cfg[key].as_str().ok_or_else(|| ServiceError::Config(format!("server state lacks sensor_config.{key}")))
    };
    let base = cfg["base_dir"].as_str().map(Path::new);
    let bad = |e: hil_core::sensors::SensorError| ServiceError::Config(format!("sensor config: {e}"));
    let types = parse_sensor_types(text("types")?, base).map_err(bad)?;
    let mounts = parse_sensor_mounts(text("mounts")?).map_err(bad)?;
    resolve_specs(&types, mounts).map_err(bad)
}

fn lower_priority(nice: i32) {
    if nice == 0 {
        return;
    }
    // SAFETY: plain syscalls on the calling thread's id.
    let rc = unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        libc::setpriority(libc::PRIO_PROCESS, tid, nice)
    };
    if rc != 0 {
        log::debug!("setpriority({nice}) failed: {}", std::io::Error::last_os_error());
    }
}

pub(super) fn run(ctx: &ServiceContext) -> Result<(), ServiceError> {
    let specs = specs_from_state(&ctx.get_state()?)?;
    let Some(road) = ctx.road_network()? else { return Ok(()) };
    let frames = ctx.bus.subscribe(topics::FRAME, Qos::BestEffort(1))?;
    let snapshot = loop {
        let Some((snap, _)) = ctx.next_frame(&frames)? else { return Ok(()) };
        if snap.ego_actor().is_some() {
            break snap;
        }
    };
    drop(frames);
    let kit = build_sensor_kit(specs, ctx.session.dt, &snapshot, road.geo_origin, ctx.options.sensor_seed)
        .map_err(|e| ServiceError::Config(format!("sensor kit: {e}")))?;
    let tf = ctx.bus.advertise(topics::latched(topics::TF_STATIC))?;
    tf.publish(snapshot.sim_time, kit.transforms().encode())?;
    let enable = kit.enable_map();
    let enable_sub = ctx.bus.subscribe(topics::SENSOR_ENABLE, Qos::Reliable(4))?;

    let nodes = kit.into_nodes();
    let mut runners = Vec::with_capacity(nodes.len());
    for node in nodes {
        let publishers = node
            .topics()
            .map(|t| Ok((t.to_string(), ctx.bus.advertise(topics::sensor(t))?)))
            .collect::<Result<BTreeMap<_, _>, ServiceError>>()?;
        let frames = ctx.bus.subscribe(topics::FRAME, Qos::BestEffort(2))?;
        runners.push((node, publishers, frames));
    }
    log::info!("{}: {} sensors running", ctx.kind, runners.len());

    std::thread::scope(|scope| {
        let handles: Vec<_> = runners
            .into_iter()
            .map(|(node, publishers, frames)| {
                std::thread::Builder::new()
                    .name(format!("sensor-{}", node.name()))
                    .spawn_scoped(scope, move || run_node(ctx, node, publishers, frames))
                    .expect("spawn sensor thread")
            })
            .collect();
        let mut result = Ok(());
        while let Some(env) = ctx.wait(&enable_sub)? {
            match serde_json::from_slice::<BTreeMap<String, bool>>(&env.payload) {
                Ok(states) => {
                    for (mount, on) in states {
                        if let Err(e) = enable.set(&mount, on) {
                            log::debug!("enable state for unknown mount {mount}: {e}");
                        }
                    }
                }
                Err(e) => log::warn!("bad enable state: {e}"),
            }
        }
        for h in handles {
            let r = h.join().unwrap_or_else(|p| std::panic::resume_unwind(p));
            result = result.and(r);
        }
        result
    })
}

fn run_node(
    ctx: &ServiceContext,
    mut node: SensorNode,
    publishers: BTreeMap<String, AnyPublisher>,
    frames: hil_transport::Subscription,
) -> Result<(), ServiceError> {
    if matches!(node.kind(), SensorKind::Camera | SensorKind::Lidar) {
        lower_priority(ctx.options.heavy_sensor_nice);
    }
    while let Some(env) = ctx.wait(&frames)? {
        let (snapshot, _) = match decode_frame(&env.payload) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("{}: bad frame: {e}", node.name());
                continue;
            }
        };
        let outputs = match node.fire(&snapshot) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("{}: {e}", node.name());
                continue;
            }
        };
        for out in outputs {
            if let Some(p) = publishers.get(&out.topic) {
                p.publish(out.stamp, out.payload)?;
            }
        }
    }
    Ok(())
}
