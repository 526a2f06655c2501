//! Binary codec for one world frame: the snapshot taken at a tick boundary
//! plus the traffic-agent plans valid at that tick.
//!
//! Layout (little-endian): magic `SNP1`, sim_time f64, tick u64, ego id u64
//! (`u64::MAX` when there is none), actor count u32, actors, plan count u32,
//! plans. Each actor is 146 bytes; each plan point is 56 bytes.

use crate::codec::{get_f64, get_u32, get_u64, get_u8, need, DecodeError};
use crate::groundtruth::{AgentPlans, PlanPoint};
use crate::world::{Actor, ActorId, ActorKind, ManagedBy, Snapshot};
use crate::{Pose, Vec3};
use bytes::{Buf, BufMut};

pub const FRAME_MAGIC: [u8; 4] = *b"SNP1";
const NO_EGO: u64 = u64::MAX;

fn put_vec3(buf: &mut Vec<u8>, v: &Vec3) {
    buf.put_f64_le(v.x);
    buf.put_f64_le(v.y);
    buf.put_f64_le(v.z);
}

fn get_vec3(buf: &mut &[u8]) -> Result<Vec3, DecodeError> {
    Ok(Vec3::new(get_f64(buf)?, get_f64(buf)?, get_f64(buf)?))
}

fn put_pose(buf: &mut Vec<u8>, p: &Pose) {
    put_vec3(buf, &p.position);
    buf.put_f64_le(p.roll);
    buf.put_f64_le(p.pitch);
    buf.put_f64_le(p.yaw);
}

fn get_pose(buf: &mut &[u8]) -> Result<Pose, DecodeError> {
    Ok(Pose { position: get_vec3(buf)?, roll: get_f64(buf)?, pitch: get_f64(buf)?, yaw: get_f64(buf)? })
}

fn kind_code(kind: ActorKind) -> u8 {
    match kind {
        ActorKind::EgoVehicle => 0,
        ActorKind::Vehicle => 1,
        ActorKind::Pedestrian => 2,
        ActorKind::StaticProp => 3,
    }
}

fn kind_from(code: u8) -> Result<ActorKind, DecodeError> {
    Ok(match code {
        0 => ActorKind::EgoVehicle,
        1 => ActorKind::Vehicle,
        2 => ActorKind::Pedestrian,
        3 => ActorKind::StaticProp,
        other => return Err(DecodeError::Invalid { field: "actor kind", value: other as u64 }),
    })
}

fn put_actor(buf: &mut Vec<u8>, a: &Actor) {
    buf.put_u64_le(a.id.0);
    buf.put_u8(kind_code(a.kind));
    match a.managed_by {
        ManagedBy::None => {
            buf.put_u8(0);
            buf.put_u64_le(0);
        }
        ManagedBy::External => {
            buf.put_u8(1);
            buf.put_u64_le(0);
        }
        ManagedBy::TrafficAgent { seed } => {
            buf.put_u8(2);
            buf.put_u64_le(seed);
        }
    }
    put_pose(buf, &a.pose);
    put_vec3(buf, &a.velocity);
    put_vec3(buf, &a.acceleration);
    buf.put_f64_le(a.yaw_rate);
    put_vec3(buf, &a.bbox_extent);
}

fn get_actor(buf: &mut &[u8]) -> Result<Actor, DecodeError> {
    let id = ActorId(get_u64(buf)?);
    let kind = kind_from(get_u8(buf)?)?;
    let tag = get_u8(buf)?;
    let seed = get_u64(buf)?;
    let managed_by = match tag {
        0 => ManagedBy::None,
        1 => ManagedBy::External,
        2 => ManagedBy::TrafficAgent { seed },
        other => return Err(DecodeError::Invalid { field: "managed_by", value: other as u64 }),
    };
    Ok(Actor {
        id,
        kind,
        pose: get_pose(buf)?,
        velocity: get_vec3(buf)?,
        acceleration: get_vec3(buf)?,
        yaw_rate: get_f64(buf)?,
        bbox_extent: get_vec3(buf)?,
        managed_by,
    })
}

pub fn encode_frame(snapshot: &Snapshot, plans: &AgentPlans) -> Vec<u8> {
    let points: usize = plans.values().map(Vec::len).sum();
    let mut buf = Vec::with_capacity(32 + snapshot.actors().len() * 146 + plans.len() * 12 + points * 56);
    buf.put_slice(&FRAME_MAGIC);
    buf.put_f64_le(snapshot.sim_time);
    buf.put_u64_le(snapshot.tick_index);
    buf.put_u64_le(snapshot.ego.map_or(NO_EGO, |id| id.0));
    buf.put_u32_le(snapshot.actors().len() as u32);
    for actor in snapshot.actors() {
        put_actor(&mut buf, actor);
    }
    buf.put_u32_le(plans.len() as u32);
    for (id, path) in plans {
        buf.put_u64_le(id.0);
        buf.put_u32_le(path.len() as u32);
        for point in path {
            buf.put_f64_le(point.stamp);
            put_pose(&mut buf, &point.pose);
        }
    }
    buf
}

pub fn decode_frame(mut raw: &[u8]) -> Result<(Snapshot, AgentPlans), DecodeError> {
    let buf = &mut raw;
    need(buf, 4)?;
    let mut magic = [0u8; 4];
    buf.copy_to_slice(&mut magic);
    if magic != FRAME_MAGIC {
        return Err(DecodeError::BadMagic { expected: FRAME_MAGIC, found: magic });
    }
    let sim_time = get_f64(buf)?;
    let tick = get_u64(buf)?;
    let ego = match get_u64(buf)? {
        NO_EGO => None,
        id => Some(ActorId(id)),
    };
    let count = get_u32(buf)? as usize;
    need(buf, count.saturating_mul(146))?;
    let actors = (0..count).map(|_| get_actor(buf)).collect::<Result<Vec<_>, _>>()?;
    let mut plans = AgentPlans::new();
    for _ in 0..get_u32(buf)? {
        let id = ActorId(get_u64(buf)?);
        let n = get_u32(buf)? as usize;
        need(buf, n.saturating_mul(56))?;
        let path = (0..n)
            .map(|_| Ok(PlanPoint { stamp: get_f64(buf)?, pose: get_pose(buf)? }))
            .collect::<Result<Vec<_>, DecodeError>>()?;
        plans.insert(id, path);
    }
    Ok((Snapshot::new(sim_time, tick, ego, actors), plans))
}

/// Tick stamp and index without decoding the actors.
pub fn peek_frame(mut raw: &[u8]) -> Result<(f64, u64), DecodeError> {
    let buf = &mut raw;
    need(buf, 20)?;
    let mut magic = [0u8; 4];
    buf.copy_to_slice(&mut magic);
    if magic != FRAME_MAGIC {
        return Err(DecodeError::BadMagic { expected: FRAME_MAGIC, found: magic });
    }
    Ok((get_f64(buf)?, get_u64(buf)?))
}
