use super::{
    check_flow, check_sink, check_source, PedFlow, Position, ScenarioConfig, ScenarioEdit, ScenarioError,
    StaticKind, WeatherParams,
};
use crate::geometry::{planar_distance, Pose};
use crate::groundtruth::{AgentPlans, PlanPoint};
use crate::road::{LaneId, LaneWalker, RoadNetwork};
use crate::world::{ActorId, ActorKind, ManagedBy, StepHook, World};
use crate::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const VEHICLE_EXTENT: Vec3 = Vec3::new(2.4, 1.0, 0.8);
pub const PEDESTRIAN_EXTENT: Vec3 = Vec3::new(0.3, 0.3, 0.9);
pub const PROP_EXTENT: Vec3 = Vec3::new(0.5, 0.5, 0.5);

/// Placements further than this outside the road bounds are rejected.
const MAP_MARGIN: f64 = 20.0;

const CRUISE_SPEED: f64 = 8.0;
const FOLLOW_GAP: f64 = 8.0;
const PLAN_HORIZON: f64 = 8.0;
const PLAN_RESOLUTION: f64 = 0.5;

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
struct TrafficAgent {
    lane: LaneId,
    s: f64,
    rng: ChaCha8Rng,
    cruise_speed: f64,
    moving: bool,
    last_update: f64,
}

impl TrafficAgent {
    fn walker<'a>(&self, road: &'a RoadNetwork) -> LaneWalker<'a> {
        LaneWalker::with_rng(road, self.lane, self.s, self.rng.clone()).expect("agent lane exists")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub spawned: u64,
    pub blocked_retries: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct SourceState {
    next_due: Option<f64>,
    stats: SourceStats,
}

#[derive(Debug, Clone, Copy)]
struct Walker {
    actor: ActorId,
    s: f64,
}

#[derive(Debug, Clone, Default)]
struct FlowState {
    walkers: Vec<Walker>,
    /// Respawn times of walkers waiting to re-enter at the path start.
    pending: Vec<f64>,
    cumulative: Vec<f64>,
    last_update: Option<f64>,
}

impl FlowState {
    fn new(flow: &PedFlow) -> Self {
        let mut cumulative = vec![0.0];
        for w in flow.path.windows(2) {
            let last = *cumulative.last().unwrap();
            cumulative.push(last + (w[1].to_vec3() - w[0].to_vec3()).norm());
        }
        Self { walkers: Vec::new(), pending: Vec::new(), cumulative, last_update: None }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn pose_at(&self, path: &[Position], s: f64) -> (Pose, Vec3) {
        let seg = self.cumulative.partition_point(|&c| c <= s).clamp(1, path.len() - 1) - 1;
        let (a, b) = (path[seg].to_vec3(), path[seg + 1].to_vec3());
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        let dir = if seg_len > 0.0 { (b - a) / seg_len } else { Vec3::x() };
        let position = a + dir * (s - self.cumulative[seg]);
        (Pose::new(position, 0.0, 0.0, dir.y.atan2(dir.x)), dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowStats {
    pub active: usize,
    pub pending: usize,
}

impl FlowStats {
    /// Walkers on the path plus walkers waiting to respawn.
    pub fn population(&self) -> usize {
        self.active + self.pending
    }
}

/// Runs a scenario against a world: places content, spawns from sources,
/// clears sinks, moves pedestrians and drives traffic agents.
///
/// Install it with [`World::add_step_hook`] (usually behind an
/// `Arc<Mutex<_>>`) so it runs inside every tick.
#[derive(Debug)]
pub struct ScenarioEngine {
    config: ScenarioConfig,
    statics: Vec<Option<ActorId>>,
    sources: Vec<SourceState>,
    flows: Vec<FlowState>,
    agents: std::collections::BTreeMap<ActorId, TrafficAgent>,
    plans: AgentPlans,
    weather_revision: u64,
    sink_removals: u64,
    started: bool,
    errors: Vec<String>,
}

impl ScenarioEngine {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        Ok(Self {
            statics: vec![None; config.statics.len()],
            sources: vec![SourceState::default(); config.sources.len()],
            flows: config.ped_flows.iter().map(FlowState::new).collect(),
            config,
            agents: Default::default(),
            plans: AgentPlans::new(),
            weather_revision: 0,
            sink_removals: 0,
            started: false,
            errors: Vec::new(),
        })
    }

    /// The current scenario, including live edits. Saving this reproduces the
    /// running scene.
    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn weather(&self) -> &WeatherParams {
        &self.config.weather
    }

    /// Incremented on every weather change.
    pub fn weather_revision(&self) -> u64 {
        self.weather_revision
    }

    pub fn plans(&self) -> &AgentPlans {
        &self.plans
    }

    pub fn source_stats(&self) -> Vec<SourceStats> {
        self.sources.iter().map(|s| s.stats).collect()
    }

    pub fn flow_stats(&self) -> Vec<FlowStats> {
        self.flows.iter().map(|f| FlowStats { active: f.walkers.len(), pending: f.pending.len() }).collect()
    }

    /// Arc-length progress of every walker in a flow.
    pub fn walker_progress(&self, flow: usize) -> Vec<(ActorId, f64)> {
        self.flows.get(flow).map(|f| f.walkers.iter().map(|w| (w.actor, w.s)).collect()).unwrap_or_default()
    }

    pub fn traffic_agents(&self) -> Vec<ActorId> {
        self.agents.keys().copied().collect()
    }

    pub fn sink_removals(&self) -> u64 {
        self.sink_removals
    }

    /// Per-element failures since the last call.
    pub fn take_errors(&mut self) -> Vec<String> {
        std::mem::take(&mut self.errors)
    }

    fn report(&mut self, what: String) {
        log::warn!("{what}");
        self.errors.push(what);
    }

    /// Places statics, traffic vehicles and initial walkers. Called
    /// implicitly by the first [`step`](Self::step).
    pub fn start(&mut self, world: &mut World) {
        if self.started {
            return;
        }
        self.started = true;
        let now = world.clock().sim_time;
        for i in 0..self.config.statics.len() {
            let placement = self.config.statics[i];
            match place_static(world, placement.kind, placement.position) {
                Ok(id) => self.statics[i] = Some(id),
                Err(e) => self.report(format!("static {i}: {e}")),
            }
        }
        for i in 0..self.config.traffic_vehicles.len() {
            let t = self.config.traffic_vehicles[i];
            if let Err(e) = self.spawn_agent(world, t.position, mix(self.config.global_seed, t.seed)) {
                self.report(format!("traffic vehicle {i}: {e}"));
            }
        }
        for i in 0..self.flows.len() {
            self.populate_flow(world, i, now);
        }
        for (source, state) in self.config.sources.iter().zip(&mut self.sources) {
            state.next_due = Some(now + source.delay_s);
        }
    }

    pub fn step(&mut self, world: &mut World) {
        self.start(world);
        let now = world.clock().sim_time;
        self.forget_missing(world);
        self.drive_agents(world, now);
        self.walk_flows(world, now);
        self.run_sources(world, now);
        self.run_sinks(world);
    }

    pub fn apply_edit(&mut self, world: &mut World, edit: ScenarioEdit) -> Result<Option<ActorId>, ScenarioError> {
        let now = world.clock().sim_time;
        match edit {
            ScenarioEdit::AddStatic(placement) => {
                let id = place_static(world, placement.kind, placement.position)?;
                self.config.statics.push(placement);
                self.statics.push(Some(id));
                Ok(Some(id))
            }
            ScenarioEdit::RemoveStatic { index } => {
                check_index("static", index, self.statics.len())?;
                self.config.statics.remove(index);
                if let Some(id) = self.statics.remove(index) {
                    let _ = world.destroy_actor(id);
                }
                Ok(None)
            }
            ScenarioEdit::AddTrafficVehicle(t) => {
                let id = self.spawn_agent(world, t.position, mix(self.config.global_seed, t.seed))?;
                self.config.traffic_vehicles.push(t);
                Ok(Some(id))
            }
            ScenarioEdit::AddSource(source) => {
                check_source(&source)?;
                self.config.sources.push(source);
                self.sources.push(SourceState { next_due: Some(now + source.delay_s), ..Default::default() });
                Ok(None)
            }
            ScenarioEdit::RemoveSource { index } => {
                check_index("source", index, self.sources.len())?;
                self.config.sources.remove(index);
                self.sources.remove(index);
                Ok(None)
            }
            ScenarioEdit::AddSink(sink) => {
                check_sink(&sink)?;
                self.config.sinks.push(sink);
                Ok(None)
            }
            ScenarioEdit::RemoveSink { index } => {
                check_index("sink", index, self.config.sinks.len())?;
                self.config.sinks.remove(index);
                Ok(None)
            }
            ScenarioEdit::AddFlow(flow) => {
                check_flow(&flow)?;
                self.flows.push(FlowState::new(&flow));
                self.config.ped_flows.push(flow);
                if self.started {
                    self.populate_flow(world, self.flows.len() - 1, now);
                }
                Ok(None)
            }
            ScenarioEdit::RemoveFlow { index } => {
                check_index("flow", index, self.flows.len())?;
                self.config.ped_flows.remove(index);
                for w in self.flows.remove(index).walkers {
                    let _ = world.destroy_actor(w.actor);
                }
                Ok(None)
            }
            ScenarioEdit::SetWeather(weather) => {
                self.set_weather(weather)?;
                Ok(None)
            }
        }
    }

    pub fn set_weather(&mut self, weather: WeatherParams) -> Result<(), ScenarioError> {
        weather.validate()?;
        self.config.weather = weather;
        self.weather_revision += 1;
        Ok(())
    }

    fn spawn_agent(&mut self, world: &mut World, at: Position, seed: u64) -> Result<ActorId, ScenarioError> {
        let road = world.road().clone();
        let proj = road.project(&at.to_vec3()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let pose = road.lane(proj.lane).expect("projected lane exists").pose_at(proj.s);
        let id = world.spawn_actor(ActorKind::Vehicle, pose, VEHICLE_EXTENT, ManagedBy::TrafficAgent { seed })?;
        let now = world.clock().sim_time;
        let agent = TrafficAgent {
            lane: proj.lane,
            s: proj.s,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cruise_speed: CRUISE_SPEED,
            moving: true,
            last_update: now,
        };
        let heading = pose.heading() * agent.cruise_speed;
        world.set_actor_motion(id, pose, heading, 0.0)?;
        self.plans.insert(id, plan_for(&agent, &road, now));
        self.agents.insert(id, agent);
        Ok(id)
    }

    fn forget_missing(&mut self, world: &World) {
        let plans = &mut self.plans;
        self.agents.retain(|id, _| {
            let alive = world.actor(*id).is_some();
            if !alive {
                plans.remove(id);
            }
            alive
        });
        let now = world.clock().sim_time;
        for (flow, state) in self.config.ped_flows.iter().zip(&mut self.flows) {
            let before = state.walkers.len();
            state.walkers.retain(|w| world.actor(w.actor).is_some());
            for _ in state.walkers.len()..before {
                state.pending.push(now + flow.respawn_delay_s);
            }
        }
        for slot in &mut self.statics {
            if slot.is_some_and(|id| world.actor(id).is_none()) {
                *slot = None;
            }
        }
    }

    fn drive_agents(&mut self, world: &mut World, now: f64) {
        let road = world.road().clone();
        let ids: Vec<ActorId> = self.agents.keys().copied().collect();
        for id in ids {
            let Some(extent) = world.actor(id).map(|a| a.bbox_extent) else { continue };
            let agent = self.agents.get_mut(&id).expect("agent listed");
            let ds = if agent.moving { agent.cruise_speed * (now - agent.last_update) } else { 0.0 };
            agent.last_update = now;
            let mut walker = agent.walker(&road);
            if walker.advance(ds) < ds - 1e-9 {
                let _ = world.destroy_actor(id);
                self.agents.remove(&id);
                self.plans.remove(&id);
                continue;
            }
            agent.lane = walker.lane();
            agent.s = walker.s();
            agent.rng = walker.rng().clone();
            let pose = walker.pose();

            let half_width = road.lane(agent.lane).map_or(1.75, |l| l.width / 2.0);
            agent.moving = !world.actors().any(|other| {
                if other.id == id {
                    return false;
                }
                let local = pose.inverse_transform_point(&other.pose.position);
                let gap = local.x - extent.x - other.bbox_extent.x;
                local.x > 0.0 && gap <= FOLLOW_GAP && local.y.abs() <= half_width + other.bbox_extent.y
            });
            let velocity = if agent.moving { pose.heading() * agent.cruise_speed } else { Vec3::zeros() };
            let _ = world.set_actor_motion(id, pose, velocity, 0.0);
            let plan = plan_for(agent, &road, now);
            self.plans.insert(id, plan);
        }
    }

    fn populate_flow(&mut self, world: &mut World, index: usize, now: f64) {
        let flow = self.config.ped_flows[index].clone();
        let state = &mut self.flows[index];
        state.last_update = Some(now);
        let spacing = state.length() / flow.crowd_size as f64;
        for k in 0..flow.crowd_size {
            let s = k as f64 * spacing;
            match spawn_walker(world, &flow, state, s) {
                Some(actor) => state.walkers.push(Walker { actor, s }),
                None => state.pending.push(now),
            }
        }
    }

    fn walk_flows(&mut self, world: &mut World, now: f64) {
        for (flow, state) in self.config.ped_flows.iter().zip(&mut self.flows) {
            let step = flow.walk_speed * (now - state.last_update.unwrap_or(now));
            state.last_update = Some(now);
            let length = state.length();
            let mut finished = 0;
            let mut walkers = std::mem::take(&mut state.walkers);
            walkers.retain_mut(|w| {
                w.s += step;
                if w.s >= length {
                    let _ = world.destroy_actor(w.actor);
                    finished += 1;
                    return false;
                }
                let (pose, dir) = state.pose_at(&flow.path, w.s);
                let _ = world.set_actor_motion(w.actor, pose, dir * flow.walk_speed, 0.0);
                true
            });
            for _ in 0..finished {
                state.pending.push(now + flow.respawn_delay_s);
            }
            state.walkers = walkers;

            let mut still_pending = Vec::with_capacity(state.pending.len());
            let mut due: Vec<f64> = std::mem::take(&mut state.pending);
            due.sort_by(f64::total_cmp);
            for t in due {
                if t > now + 1e-9 {
                    still_pending.push(t);
                    continue;
                }
                match spawn_walker(world, flow, state, 0.0) {
                    Some(actor) => state.walkers.push(Walker { actor, s: 0.0 }),
                    None => still_pending.push(t),
                }
            }
            state.pending = still_pending;
        }
    }

    fn run_sources(&mut self, world: &mut World, now: f64) {
        for i in 0..self.sources.len() {
            let source = self.config.sources[i];
            let state = &mut self.sources[i];
            let due = *state.next_due.get_or_insert(now + source.delay_s);
            if now + 1e-9 < due {
                continue;
            }
            let seed = mix(mix(self.config.global_seed, i as u64), state.stats.spawned);
            match self.spawn_agent(world, source.position, seed) {
                Ok(_) => {
                    let state = &mut self.sources[i];
                    state.stats.spawned += 1;
                    let mut next = due + source.delay_s;
                    while next <= now + 1e-9 {
                        next += source.delay_s;
                    }
                    state.next_due = Some(next);
                }
                Err(ScenarioError::SpawnBlocked(_)) => self.sources[i].stats.blocked_retries += 1,
                Err(e) => {
                    self.sources[i].next_due = Some(due + source.delay_s);
                    self.report(format!("source {i}: {e}"));
                }
            }
        }
    }

    fn run_sinks(&mut self, world: &mut World) {
        if self.config.sinks.is_empty() {
            return;
        }
        let ego = world.ego_id();
        let doomed: Vec<ActorId> = world
            .actors()
            .filter(|a| Some(a.id) != ego)
            .filter(|a| {
                self.config
                    .sinks
                    .iter()
                    .any(|s| planar_distance(&a.pose.position, &s.position.to_vec3()) <= s.radius_m)
            })
            .map(|a| a.id)
            .collect();
        for id in doomed {
            if world.destroy_actor(id).is_ok() {
                self.sink_removals += 1;
            }
        }
        self.forget_missing(world);
    }
}

impl StepHook for ScenarioEngine {
    fn after_step(&mut self, world: &mut World) {
        self.step(world);
    }
}

fn check_index(kind: &'static str, index: usize, len: usize) -> Result<(), ScenarioError> {
    if index < len {
        Ok(())
    } else {
        Err(ScenarioError::NoSuchElement { kind, index })
    }
}

/// Spawns a parked vehicle aligned with the nearest road point, or a prop
/// with zero yaw, at the requested position.
pub(crate) fn place_static(world: &mut World, kind: StaticKind, at: Position) -> Result<ActorId, ScenarioError> {
    let road = world.road().clone();
    let p = at.to_vec3();
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(ScenarioError::Invalid("non-finite position".into()));
    }
    if let Some((lo, hi)) = road.bounds() {
        let inside = p.x >= lo.x - MAP_MARGIN
            && p.x <= hi.x + MAP_MARGIN
            && p.y >= lo.y - MAP_MARGIN
            && p.y <= hi.y + MAP_MARGIN;
        if !inside {
            return Err(ScenarioError::OutsideMap { x: at.x, y: at.y });
        }
    }
    let (actor_kind, extent, yaw) = match kind {
        StaticKind::Vehicle => {
            let yaw = road.nearest_road_point(&p).map(|pose| pose.yaw).unwrap_or(0.0);
            (ActorKind::Vehicle, VEHICLE_EXTENT, yaw)
        }
        StaticKind::Prop => (ActorKind::StaticProp, PROP_EXTENT, 0.0),
    };
    Ok(world.spawn_actor(actor_kind, Pose::planar(at.x, at.y, yaw), extent, ManagedBy::None)?)
}

fn spawn_walker(world: &mut World, flow: &PedFlow, state: &FlowState, s: f64) -> Option<ActorId> {
    let (pose, dir) = state.pose_at(&flow.path, s);
    let id = world.spawn_actor(ActorKind::Pedestrian, pose, PEDESTRIAN_EXTENT, ManagedBy::None).ok()?;
    let _ = world.set_actor_motion(id, pose, dir * flow.walk_speed, 0.0);
    Some(id)
}

/// The agent's own waypoints over the planning horizon, starting at its
/// current position. A halted agent plans to stay put.
fn plan_for(agent: &TrafficAgent, road: &RoadNetwork, now: f64) -> Vec<PlanPoint> {
    let mut walker = agent.walker(road);
    let steps = (PLAN_HORIZON / PLAN_RESOLUTION + 1e-9).floor() as usize;
    let mut plan = vec![PlanPoint { stamp: now, pose: walker.pose() }];
    let spacing = if agent.moving { agent.cruise_speed * PLAN_RESOLUTION } else { 0.0 };
    for k in 1..=steps {
        if spacing > 0.0 && walker.advance(spacing) < spacing - 1e-9 {
            break;
        }
        plan.push(PlanPoint { stamp: now + k as f64 * PLAN_RESOLUTION, pose: walker.pose() });
    }
    plan
}
