//! Replication of reference actors from a primary world onto asynchronous
//! secondary worlds by first-order extrapolation.
//!
//! Reference stamps are read against the secondary's own sim clock. Both
//! clocks are expected to share an epoch; the bridge never adjusts either.
//!
//! Batch layout (little-endian): magic `REF1`, count u32, then per state:
//! actor id u64, stamp f64, pose (6 × f64), velocity (3 × f64), yaw rate f64,
//! control flag u8 and, when the flag is 1, a 25-byte control command.

use crate::actuation::ControlCommand;
use crate::codec::{get_f64, get_magic, get_pose, get_u32, get_u64, get_u8, get_vec3, need, put_pose, put_vec3, DecodeError};
use crate::geometry::normalize_angle;
use crate::world::{Actor, ActorId, ActorKind, ManagedBy, Snapshot, StepHook, World, WorldError};
use crate::{Pose, Vec3};
use bytes::{Buf, BufMut};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const SYNC_CAPACITY: usize = 20;
pub const DEFAULT_SYNC_PERIOD: f64 = 0.1;
/// Missed cycles after which replicated actors are frozen.
pub const STALE_AFTER_MISSED: u32 = 5;
pub const REF_BATCH_MAGIC: [u8; 4] = *b"REF1";

const CONTROL_LEN: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error("cannot extrapolate backwards from {t0} to {t}")]
    TimeReversed { t0: f64, t: f64 },
    #[error("sync set is full ({capacity} actors)")]
    CapacityExceeded { capacity: usize },
    #[error("actor {0} is already synchronized")]
    AlreadyRegistered(ActorId),
    #[error("sync link is down")]
    LinkDown,
    #[error("could not create the replica: {0}")]
    Replica(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefState {
    pub id: ActorId,
    pub stamp: f64,
    pub pose: Pose,
    pub velocity: Vec3,
    pub yaw_rate: f64,
    pub last_control: Option<ControlCommand>,
}

impl RefState {
    pub fn from_actor(actor: &Actor, stamp: f64, last_control: Option<ControlCommand>) -> Self {
        Self {
            id: actor.id,
            stamp,
            pose: actor.pose,
            velocity: actor.velocity,
            yaw_rate: actor.yaw_rate,
            last_control,
        }
    }
}

/// One reference state per requested id, stamped with the snapshot time.
pub fn capture_reference(
    snapshot: &Snapshot,
    ids: &[ActorId],
    controls: &BTreeMap<ActorId, ControlCommand>,
) -> Result<Vec<RefState>, SyncError> {
    ids.iter()
        .map(|&id| {
            let actor = snapshot.actor(id).ok_or(SyncError::UnknownActor(id))?;
            Ok(RefState::from_actor(actor, snapshot.sim_time, controls.get(&id).copied()))
        })
        .collect()
}

/// Euler step of the reference pose to time `t`.
pub fn extrapolate(reference: &RefState, t: f64) -> Result<Pose, SyncError> {
    let dt = t - reference.stamp;
    if dt < 0.0 {
        return Err(SyncError::TimeReversed { t0: reference.stamp, t });
    }
    let p = &reference.pose;
    Ok(Pose {
        position: p.position + reference.velocity * dt,
        yaw: normalize_angle(p.yaw + reference.yaw_rate * dt),
        ..*p
    })
}

pub fn encode_batch(states: &[RefState]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + states.len() * (97 + CONTROL_LEN));
    buf.put_slice(&REF_BATCH_MAGIC);
    buf.put_u32_le(states.len() as u32);
    for s in states {
        buf.put_u64_le(s.id.0);
        buf.put_f64_le(s.stamp);
        put_pose(&mut buf, &s.pose);
        put_vec3(&mut buf, &s.velocity);
        buf.put_f64_le(s.yaw_rate);
        match &s.last_control {
            Some(c) => {
                buf.put_u8(1);
                buf.put_slice(&c.encode());
            }
            None => buf.put_u8(0),
        }
    }
    buf
}

pub fn decode_batch(mut raw: &[u8]) -> Result<Vec<RefState>, DecodeError> {
    get_magic(&mut raw, REF_BATCH_MAGIC)?;
    let count = get_u32(&mut raw)? as usize;
    let mut out = Vec::with_capacity(count.min(SYNC_CAPACITY * 4));
    for _ in 0..count {
        let id = ActorId(get_u64(&mut raw)?);
        let stamp = get_f64(&mut raw)?;
        let pose = get_pose(&mut raw)?;
        let velocity = get_vec3(&mut raw)?;
        let yaw_rate = get_f64(&mut raw)?;
        let last_control = match get_u8(&mut raw)? {
            0 => None,
            1 => {
                need(&raw, CONTROL_LEN)?;
                let c = ControlCommand::decode(&raw[..CONTROL_LEN])?;
                raw.advance(CONTROL_LEN);
                Some(c)
            }
            other => return Err(DecodeError::Invalid { field: "control flag", value: other as u64 }),
        };
        out.push(RefState { id, stamp, pose, velocity, yaw_rate, last_control });
    }
    Ok(out)
}

/// Bijective primary → secondary id mapping with a fixed capacity.
#[derive(Debug, Clone)]
pub struct SyncSet {
    capacity: usize,
    forward: BTreeMap<ActorId, ActorId>,
    replicas: BTreeSet<ActorId>,
}

impl Default for SyncSet {
    fn default() -> Self {
        Self::new(SYNC_CAPACITY)
    }
}

impl SyncSet {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, forward: BTreeMap::new(), replicas: BTreeSet::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Fails without side effects when the set is full or either id is
    /// already mapped.
    pub fn check(&self, primary: ActorId) -> Result<(), SyncError> {
        if self.forward.contains_key(&primary) {
            return Err(SyncError::AlreadyRegistered(primary));
        }
        if self.forward.len() >= self.capacity {
            return Err(SyncError::CapacityExceeded { capacity: self.capacity });
        }
        Ok(())
    }

    pub fn register(&mut self, primary: ActorId, secondary: ActorId) -> Result<(), SyncError> {
        self.check(primary)?;
        if self.replicas.contains(&secondary) {
            return Err(SyncError::AlreadyRegistered(secondary));
        }
        self.forward.insert(primary, secondary);
        self.replicas.insert(secondary);
        Ok(())
    }

    pub fn deregister(&mut self, primary: ActorId) -> Option<ActorId> {
        let secondary = self.forward.remove(&primary)?;
        self.replicas.remove(&secondary);
        Some(secondary)
    }

    pub fn secondary_of(&self, primary: ActorId) -> Option<ActorId> {
        self.forward.get(&primary).copied()
    }

    pub fn primaries(&self) -> Vec<ActorId> {
        self.forward.keys().copied().collect()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (ActorId, ActorId)> + '_ {
        self.forward.iter().map(|(&p, &s)| (p, s))
    }
}

/// Primary side: decides when a capture is due.
#[derive(Debug, Clone)]
pub struct SyncSender {
    period: f64,
    next_capture: Option<f64>,
    ids: Vec<ActorId>,
}

impl SyncSender {
    pub fn new(period: f64) -> Self {
        Self { period, next_capture: None, ids: Vec::new() }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn set_ids(&mut self, ids: Vec<ActorId>) {
        self.ids = ids;
    }

    pub fn ids(&self) -> &[ActorId] {
        &self.ids
    }

    /// Captures the registered actors when a period has elapsed since the
    /// last capture. Actors missing from the snapshot are skipped.
    pub fn poll(
        &mut self,
        snapshot: &Snapshot,
        controls: &BTreeMap<ActorId, ControlCommand>,
    ) -> Option<Vec<RefState>> {
        let now = snapshot.sim_time;
        if self.next_capture.is_some_and(|due| now + 1e-9 < due) {
            return None;
        }
        self.next_capture = Some(now + self.period);
        Some(
            self.ids
                .iter()
                .filter_map(|&id| snapshot.actor(id))
                .map(|a| RefState::from_actor(a, now, controls.get(&a.id).copied()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicaStatus {
    Live,
    /// No reference received for too many cycles; the replica is frozen.
    Stale,
    /// Registered, waiting for its first reference.
    Pending,
}

/// Secondary side: holds the latest reference per replicated actor and
/// writes extrapolated states into the secondary world after every step.
#[derive(Debug)]
pub struct SyncReceiver {
    set: SyncSet,
    period: f64,
    latest: BTreeMap<ActorId, RefState>,
    last_receipt: Option<f64>,
    missed_cycles: u32,
    stale: bool,
}

impl SyncReceiver {
    pub fn new(capacity: usize, period: f64) -> Self {
        Self {
            set: SyncSet::new(capacity),
            period,
            latest: BTreeMap::new(),
            last_receipt: None,
            missed_cycles: 0,
            stale: false,
        }
    }

    pub fn sync_set(&self) -> &SyncSet {
        &self.set
    }

    /// Spawns a replica of `primary` in the secondary world and maps it.
    /// A primary ego becomes the secondary's ego so sensors can attach to it.
    pub fn register(&mut self, world: &mut World, primary: &Actor) -> Result<ActorId, SyncError> {
        self.set.check(primary.id)?;
        let kind = match primary.kind {
            ActorKind::EgoVehicle if world.ego_id().is_none() => ActorKind::EgoVehicle,
            ActorKind::EgoVehicle => ActorKind::Vehicle,
            other => other,
        };
        let replica = world
            .spawn_actor(kind, primary.pose, primary.bbox_extent, ManagedBy::External)
            .map_err(|e: WorldError| SyncError::Replica(e.to_string()))?;
        self.set.register(primary.id, replica)?;
        Ok(replica)
    }

    /// Removes the mapping and destroys the replica, unless it is the
    /// secondary's ego.
    pub fn deregister(&mut self, world: &mut World, primary: ActorId) -> bool {
        let Some(replica) = self.set.deregister(primary) else { return false };
        self.latest.remove(&primary);
        if world.ego_id() == Some(replica) {
            // The secondary keeps its ego; it just stops following.
            return true;
        }
        world.destroy_actor(replica).is_ok()
    }

    /// Stores a batch; per actor only a newer stamp replaces the held state.
    pub fn receive(&mut self, batch: Vec<RefState>, local_time: f64) {
        for state in batch {
            if self.set.secondary_of(state.id).is_none() {
                continue;
            }
            let newer = self.latest.get(&state.id).is_none_or(|held| state.stamp > held.stamp);
            if newer {
                self.latest.insert(state.id, state);
            }
        }
        self.last_receipt = Some(local_time);
        self.missed_cycles = 0;
        self.stale = false;
    }

    pub fn missed_cycles(&self) -> u32 {
        self.missed_cycles
    }

    pub fn status(&self, primary: ActorId) -> Option<ReplicaStatus> {
        self.set.secondary_of(primary)?;
        Some(if self.stale {
            ReplicaStatus::Stale
        } else if self.latest.contains_key(&primary) {
            ReplicaStatus::Live
        } else {
            ReplicaStatus::Pending
        })
    }

    pub fn last_control(&self, primary: ActorId) -> Option<ControlCommand> {
        self.latest.get(&primary).and_then(|s| s.last_control)
    }

    /// Overwrites every replica with its reference extrapolated to the
    /// secondary's current time, or freezes them once the link is stale.
    pub fn apply(&mut self, world: &mut World) {
        let now = world.clock().sim_time;
        if let Some(last) = self.last_receipt {
            self.missed_cycles = ((now - last) / self.period + 1e-9).floor() as u32;
        }
        if self.missed_cycles >= STALE_AFTER_MISSED && !self.stale {
            self.stale = true;
            log::warn!("sync link stale after {} missed cycles; freezing replicas", self.missed_cycles);
            for (_, replica) in self.set.pairs() {
                if let Some(actor) = world.actor(replica) {
                    let pose = actor.pose;
                    let _ = world.set_actor_motion(replica, pose, Vec3::zeros(), 0.0);
                }
            }
        }
        if self.stale {
            return;
        }
        for (primary, replica) in self.set.pairs() {
            let Some(reference) = self.latest.get(&primary) else { continue };
            match extrapolate(reference, now) {
                Ok(pose) => {
                    let _ = world.set_actor_motion(replica, pose, reference.velocity, reference.yaw_rate);
                }
                Err(e) => log::debug!("skipping replica {replica}: {e}"),
            }
        }
    }
}

impl StepHook for SyncReceiver {
    fn after_step(&mut self, world: &mut World) {
        self.apply(world);
    }
}
