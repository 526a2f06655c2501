//! The authoritative world: actor set, fixed-step clock and the tick loop.
//!
//! Only the owner of a [`World`] mutates it. Other threads hand work to the
//! world through a [`WorldMailbox`], which is drained at well-defined points
//! of every tick. Readers receive immutable [`Snapshot`]s.

use crate::geometry::{normalize_angle, Footprint, Pose, Vec3};
use crate::road::{RoadError, RoadNetwork};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

pub const MIN_DT: f64 = 0.001;
pub const MAX_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(pub u64);

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickMode {
    /// Fixed step, paced so one step takes `dt` of wall time.
    #[serde(alias = "realtime")]
    SyncRealtime,
    /// Fixed step, as fast as compute allows.
    #[serde(alias = "fast")]
    SyncFast,
    /// Variable step following the wall clock.
    Async,
}

impl TickMode {
    pub fn is_sync(self) -> bool {
        !matches!(self, TickMode::Async)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TickMode::SyncRealtime => "realtime",
            TickMode::SyncFast => "fast",
            TickMode::Async => "async",
        }
    }
}

impl std::str::FromStr for TickMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "realtime" | "sync_realtime" => Ok(TickMode::SyncRealtime),
            "fast" | "sync_fast" => Ok(TickMode::SyncFast),
            "async" => Ok(TickMode::Async),
            other => Err(format!("unknown tick mode '{other}' (expected realtime, fast or async)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub sim_time: f64,
    pub dt: f64,
    pub tick_index: u64,
    pub mode: TickMode,
}

impl SimClock {
    fn advance(&mut self) {
        self.tick_index += 1;
        // Derived from the index, never accumulated.
        self.sim_time = self.tick_index as f64 * self.dt;
    }

    fn advance_by(&mut self, step: f64) {
        self.tick_index += 1;
        self.sim_time += step;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    EgoVehicle,
    Vehicle,
    Pedestrian,
    StaticProp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManagedBy {
    TrafficAgent { seed: u64 },
    External,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: ActorId,
    pub kind: ActorKind,
    pub pose: Pose,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub yaw_rate: f64,
    pub bbox_extent: Vec3,
    pub managed_by: ManagedBy,
}

impl Actor {
    pub fn footprint(&self) -> Footprint {
        Footprint::new(&self.pose, &self.bbox_extent)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Pose of the bounding-box center. The actor pose marks the bottom
    /// center of the box, so the box rests on the ground at z = 0.
    pub fn box_pose(&self) -> Pose {
        Pose {
            position: self.pose.transform_point(&Vec3::new(0.0, 0.0, self.bbox_extent.z)),
            ..self.pose
        }
    }
}

/// Immutable copy of the world at a tick boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub sim_time: f64,
    pub tick_index: u64,
    pub ego: Option<ActorId>,
    actors: Arc<[Actor]>,
}

impl Snapshot {
    pub fn new(sim_time: f64, tick_index: u64, ego: Option<ActorId>, mut actors: Vec<Actor>) -> Self {
        actors.sort_by_key(|a| a.id);
        Self { sim_time, tick_index, ego, actors: actors.into() }
    }

    /// Actors in ascending id order.
    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn actor(&self, id: ActorId) -> Option<&Actor> {
        self.actors
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.actors[i])
    }

    pub fn ego_actor(&self) -> Option<&Actor> {
        self.ego.and_then(|id| self.actor(id))
    }

    pub fn non_ego(&self) -> impl Iterator<Item = &Actor> {
        let ego = self.ego;
        self.actors.iter().filter(move |a| Some(a.id) != ego)
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("dt {0} s outside [{MIN_DT}, {MAX_DT}]")]
    DtOutOfRange(f64),
    #[error(transparent)]
    Road(#[from] RoadError),
    #[error("an ego vehicle already exists")]
    DuplicateEgo,
    #[error("spawn footprint overlaps actor {0}")]
    SpawnBlocked(ActorId),
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error("the ego vehicle cannot be destroyed while the world is running")]
    EgoProtected,
    #[error("bounding box extents must be strictly positive")]
    BadExtent,
    #[error("non-finite actor state")]
    NonFinite,
}

/// Motion the ego controller wants applied over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoMotion {
    /// Signed longitudinal speed after the step, m/s.
    pub speed: f64,
    pub yaw_rate: f64,
}

/// Hook run inside the tick to turn pending controls into ego motion.
pub trait EgoController: Send {
    fn step(&mut self, ego: &Actor, dt: f64, sim_time: f64) -> EgoMotion;
}

/// Logic that runs on the tick thread after every step, before the
/// snapshot is taken.
pub trait StepHook: Send {
    fn after_step(&mut self, world: &mut World);
}

impl<T: StepHook> StepHook for Arc<Mutex<T>> {
    fn after_step(&mut self, world: &mut World) {
        let mut inner = self.lock().unwrap_or_else(|e| e.into_inner());
        inner.after_step(world);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overrun {
    pub tick_index: u64,
    /// How late the tick finished relative to its wall deadline, seconds.
    pub lateness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WorldEventKind {
    Spawned { id: ActorId, kind: ActorKind },
    Destroyed { id: ActorId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldEvent {
    pub tick_index: u64,
    pub kind: WorldEventKind,
}

type WorldOp = Box<dyn FnOnce(&mut World) + Send>;

#[derive(Default)]
struct MailboxQueues {
    before_step: Vec<WorldOp>,
    after_step: Vec<WorldOp>,
}

/// Thread-safe handle for scheduling work on the world's tick thread.
#[derive(Clone, Default)]
pub struct WorldMailbox {
    queues: Arc<Mutex<MailboxQueues>>,
}

impl WorldMailbox {
    /// Runs `op` at the start of the next tick, before integration.
    pub fn post(&self, op: impl FnOnce(&mut World) + Send + 'static) {
        self.queues.lock().unwrap().before_step.push(Box::new(op));
    }

    /// Runs `op` in the next tick after integration and clock advance, before
    /// the snapshot is taken.
    pub fn post_after_step(&self, op: impl FnOnce(&mut World) + Send + 'static) {
        self.queues.lock().unwrap().after_step.push(Box::new(op));
    }

    fn take_before(&self) -> Vec<WorldOp> {
        std::mem::take(&mut self.queues.lock().unwrap().before_step)
    }

    fn take_after(&self) -> Vec<WorldOp> {
        std::mem::take(&mut self.queues.lock().unwrap().after_step)
    }
}

impl fmt::Debug for WorldMailbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorldMailbox").finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
struct Motion {
    anchor_position: Vec3,
    anchor_yaw: f64,
    anchor_tick: u64,
    anchor_time: f64,
}

#[derive(Debug, Clone)]
struct Slot {
    actor: Actor,
    motion: Motion,
}

#[derive(Debug, Default)]
struct Pacer {
    start: Option<Instant>,
    last_return: Option<Instant>,
    overruns: Vec<Overrun>,
    wall_steps: Vec<f64>,
}

impl Pacer {
    fn wait_for(&mut self, tick_index: u64, dt: f64) {
        let start = self.start.expect("pacer started");
        let deadline = start + Duration::from_secs_f64(dt * tick_index as f64);
        let now = Instant::now();
        if now > deadline {
            self.overruns.push(Overrun { tick_index, lateness: (now - deadline).as_secs_f64() });
        } else {
            sleep_until(deadline);
        }
    }

    fn record_return(&mut self) {
        let now = Instant::now();
        let previous = self.last_return.or(self.start).unwrap_or(now);
        self.wall_steps.push((now - previous).as_secs_f64());
        self.last_return = Some(now);
    }
}

/// Sleeps coarsely, then spins for the last fraction of a millisecond.
fn sleep_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_micros(250);
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let remaining = deadline - now;
        if remaining > SPIN {
            std::thread::sleep(remaining - SPIN);
        } else {
            std::hint::spin_loop();
        }
    }
}

pub struct World {
    road: Arc<RoadNetwork>,
    clock: SimClock,
    seed: u64,
    rng: ChaCha8Rng,
    actors: BTreeMap<ActorId, Slot>,
    next_id: u64,
    ego: Option<ActorId>,
    ego_controller: Option<Box<dyn EgoController>>,
    hooks: Vec<Box<dyn StepHook>>,
    mailbox: WorldMailbox,
    pacer: Pacer,
    last_async_tick: Option<Instant>,
    events: Vec<WorldEvent>,
    shutting_down: bool,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("clock", &self.clock)
            .field("actors", &self.actors.len())
            .field("ego", &self.ego)
            .finish_non_exhaustive()
    }
}

impl World {
    pub fn new(road: Arc<RoadNetwork>, dt: f64, mode: TickMode, seed: u64) -> Result<Self, WorldError> {
        if !(MIN_DT..=MAX_DT).contains(&dt) {
            return Err(WorldError::DtOutOfRange(dt));
        }
        Ok(Self {
            road,
            clock: SimClock { sim_time: 0.0, dt, tick_index: 0, mode },
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            actors: BTreeMap::new(),
            next_id: 1,
            ego: None,
            ego_controller: None,
            hooks: Vec::new(),
            mailbox: WorldMailbox::default(),
            pacer: Pacer::default(),
            last_async_tick: None,
            events: Vec::new(),
            shutting_down: false,
        })
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn road(&self) -> &Arc<RoadNetwork> {
        &self.road
    }

    pub fn mailbox(&self) -> WorldMailbox {
        self.mailbox.clone()
    }

    pub fn ego_id(&self) -> Option<ActorId> {
        self.ego
    }

    pub fn actor(&self, id: ActorId) -> Option<&Actor> {
        self.actors.get(&id).map(|s| &s.actor)
    }

    pub fn actors(&self) -> impl Iterator<Item = &Actor> {
        self.actors.values().map(|s| &s.actor)
    }

    pub fn actor_count(&self) -> usize {
        self.actors.len()
    }

    pub fn events(&self) -> &[WorldEvent] {
        &self.events
    }

    pub fn overruns(&self) -> &[Overrun] {
        &self.pacer.overruns
    }

    /// Wall-clock duration of every completed tick, seconds.
    pub fn wall_steps(&self) -> &[f64] {
        &self.pacer.wall_steps
    }

    pub fn take_wall_steps(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.pacer.wall_steps)
    }

    pub fn set_ego_controller(&mut self, controller: Box<dyn EgoController>) {
        self.ego_controller = Some(controller);
    }

    pub fn add_step_hook(&mut self, hook: Box<dyn StepHook>) {
        self.hooks.push(hook);
    }

    /// Allows the ego to be destroyed.
    pub fn begin_shutdown(&mut self) {
        self.shutting_down = true;
    }

    /// Restarts the wall-clock deadline schedule at the next tick.
    pub fn reset_realtime_anchor(&mut self) {
        self.pacer.start = None;
        self.pacer.last_return = None;
    }

    /// Id of the first actor whose footprint overlaps `footprint`, if any.
    pub fn blocking_actor(&self, footprint: &Footprint) -> Option<ActorId> {
        self.actors
            .values()
            .find(|s| s.actor.footprint().overlaps(footprint))
            .map(|s| s.actor.id)
    }

    pub fn spawn_actor(
        &mut self,
        kind: ActorKind,
        pose: Pose,
        bbox_extent: Vec3,
        managed_by: ManagedBy,
    ) -> Result<ActorId, WorldError> {
        if kind == ActorKind::EgoVehicle && self.ego.is_some() {
            return Err(WorldError::DuplicateEgo);
        }
        if !bbox_extent.iter().all(|&e| e > 0.0 && e.is_finite()) {
            return Err(WorldError::BadExtent);
        }
        if !pose.is_finite() {
            return Err(WorldError::NonFinite);
        }
        let pose = Pose::new(pose.position, pose.roll, pose.pitch, pose.yaw);
        if let Some(blocker) = self.blocking_actor(&Footprint::new(&pose, &bbox_extent)) {
            return Err(WorldError::SpawnBlocked(blocker));
        }
        let id = ActorId(self.next_id);
        self.next_id += 1;
        let actor = Actor {
            id,
            kind,
            pose,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            yaw_rate: 0.0,
            bbox_extent,
            managed_by,
        };
        let motion = self.anchor_here(&actor);
        self.actors.insert(id, Slot { actor, motion });
        if kind == ActorKind::EgoVehicle {
            self.ego = Some(id);
        }
        self.events.push(WorldEvent {
            tick_index: self.clock.tick_index,
            kind: WorldEventKind::Spawned { id, kind },
        });
        Ok(id)
    }

    pub fn destroy_actor(&mut self, id: ActorId) -> Result<(), WorldError> {
        if !self.actors.contains_key(&id) {
            return Err(WorldError::UnknownActor(id));
        }
        if Some(id) == self.ego {
            if !self.shutting_down {
                return Err(WorldError::EgoProtected);
            }
            self.ego = None;
        }
        self.actors.remove(&id);
        self.events.push(WorldEvent {
            tick_index: self.clock.tick_index,
            kind: WorldEventKind::Destroyed { id },
        });
        Ok(())
    }

    /// Overwrites an actor's kinematic state. The new state is the start of
    /// a fresh constant-velocity segment.
    pub fn set_actor_motion(
        &mut self,
        id: ActorId,
        pose: Pose,
        velocity: Vec3,
        yaw_rate: f64,
    ) -> Result<(), WorldError> {
        if !pose.is_finite() || !velocity.iter().all(|v| v.is_finite()) || !yaw_rate.is_finite() {
            return Err(WorldError::NonFinite);
        }
        let clock = self.clock;
        let slot = self.actors.get_mut(&id).ok_or(WorldError::UnknownActor(id))?;
        slot.actor.pose = Pose::new(pose.position, pose.roll, pose.pitch, pose.yaw);
        slot.actor.velocity = velocity;
        slot.actor.yaw_rate = yaw_rate;
        slot.motion = Motion {
            anchor_position: pose.position,
            anchor_yaw: slot.actor.pose.yaw,
            anchor_tick: clock.tick_index,
            anchor_time: clock.sim_time,
        };
        Ok(())
    }

    pub fn set_actor_acceleration(&mut self, id: ActorId, acceleration: Vec3) -> Result<(), WorldError> {
        let slot = self.actors.get_mut(&id).ok_or(WorldError::UnknownActor(id))?;
        slot.actor.acceleration = acceleration;
        Ok(())
    }

    fn anchor_here(&self, actor: &Actor) -> Motion {
        Motion {
            anchor_position: actor.pose.position,
            anchor_yaw: actor.pose.yaw,
            anchor_tick: self.clock.tick_index,
            anchor_time: self.clock.sim_time,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::new(
            self.clock.sim_time,
            self.clock.tick_index,
            self.ego,
            self.actors.values().map(|s| s.actor.clone()).collect(),
        )
    }

    /// Advances the world by one step and returns the resulting snapshot.
    ///
    /// In `SyncRealtime` this blocks until the wall deadline of the tick,
    /// measured from the start of the first tick. A missed deadline is
    /// recorded as an [`Overrun`]; later deadlines are not shifted.
    pub fn tick(&mut self) -> Snapshot {
        match self.clock.mode {
            TickMode::Async => {
                let now = Instant::now();
                let step = self
                    .last_async_tick
                    .map(|t| (now - t).as_secs_f64())
                    .unwrap_or(self.clock.dt)
                    .clamp(MIN_DT, 10.0 * MAX_DT);
                self.last_async_tick = Some(now);
                self.step_internal(step)
            }
            _ => self.step_internal(self.clock.dt),
        }
    }

    /// Async-mode tick with an explicit step instead of the wall clock.
    pub fn tick_with_step(&mut self, step: f64) -> Snapshot {
        assert_eq!(self.clock.mode, TickMode::Async, "explicit steps are only valid in async mode");
        assert!(step > 0.0 && step.is_finite(), "step must be positive");
        self.step_internal(step)
    }

    fn run_ops(&mut self, ops: Vec<WorldOp>) {
        for op in ops {
            if catch_unwind(AssertUnwindSafe(|| op(self))).is_err() {
                log::error!("world mailbox operation panicked; continuing");
            }
        }
    }

    fn step_internal(&mut self, step: f64) -> Snapshot {
        if self.clock.mode == TickMode::SyncRealtime && self.pacer.start.is_none() {
            self.pacer.start = Some(Instant::now());
        }
        let before = self.mailbox.take_before();
        self.run_ops(before);

        let sim_time = self.clock.sim_time;
        if let (Some(ego_id), Some(controller)) = (self.ego, self.ego_controller.as_mut()) {
            if let Some(slot) = self.actors.get_mut(&ego_id) {
                let motion = controller.step(&slot.actor, step, sim_time);
                let actor = &mut slot.actor;
                let old_velocity = actor.velocity;
                let yaw = normalize_angle(actor.pose.yaw + motion.yaw_rate * step);
                let velocity = Vec3::new(yaw.cos(), yaw.sin(), 0.0) * motion.speed;
                actor.acceleration = (velocity - old_velocity) / step;
                if velocity != actor.velocity || motion.yaw_rate != actor.yaw_rate {
                    actor.velocity = velocity;
                    actor.yaw_rate = motion.yaw_rate;
                    slot.motion = Motion {
                        anchor_position: actor.pose.position,
                        anchor_yaw: actor.pose.yaw,
                        anchor_tick: self.clock.tick_index,
                        anchor_time: sim_time,
                    };
                }
            }
        }

        let ego = self.ego;
        let controlled = self.ego_controller.is_some();
        for slot in self.actors.values_mut() {
            let actor = &mut slot.actor;
            let is_controlled_ego = controlled && Some(actor.id) == ego;
            if !is_controlled_ego && actor.acceleration != Vec3::zeros() {
                // Semi-implicit Euler: the new velocity drives this step.
                actor.velocity += actor.acceleration * step;
                slot.motion = Motion {
                    anchor_position: actor.pose.position,
                    anchor_yaw: actor.pose.yaw,
                    anchor_tick: self.clock.tick_index,
                    anchor_time: sim_time,
                };
            }
        }

        if self.clock.mode.is_sync() {
            self.clock.advance();
        } else {
            self.clock.advance_by(step);
        }

        let clock = self.clock;
        for slot in self.actors.values_mut() {
            let elapsed = if clock.mode.is_sync() {
                (clock.tick_index - slot.motion.anchor_tick) as f64 * clock.dt
            } else {
                clock.sim_time - slot.motion.anchor_time
            };
            let actor = &mut slot.actor;
            actor.pose.position = slot.motion.anchor_position + actor.velocity * elapsed;
            actor.pose.yaw = normalize_angle(slot.motion.anchor_yaw + actor.yaw_rate * elapsed);
        }

        let after = self.mailbox.take_after();
        self.run_ops(after);
        let mut hooks = std::mem::take(&mut self.hooks);
        for hook in &mut hooks {
            if catch_unwind(AssertUnwindSafe(|| hook.after_step(self))).is_err() {
                log::error!("step hook panicked; continuing");
            }
        }
        hooks.append(&mut self.hooks);
        self.hooks = hooks;

        if clock.mode == TickMode::SyncRealtime {
            self.pacer.wait_for(clock.tick_index, clock.dt);
        }
        self.pacer.record_return();
        self.snapshot()
    }
}
