//! Ground-truth detected, tracked and predicted objects derived directly
//! from world snapshots.
//!
//! Wire format: every payload starts with a 4-byte magic, the snapshot stamp
//! (f64) and a record count (u32). Each record is prefixed by its byte length
//! (u32) so readers can skip trailing fields they do not know. All numbers
//! are little-endian; poses are x, y, z, roll, pitch, yaw as f64.

use crate::codec::{
    get_f64, get_magic, get_pose, get_u32, get_u64, get_u8, get_vec3, need, put_pose, put_vec3, DecodeError,
};
use crate::road::{LaneWalker, RoadNetwork};
use crate::world::{Actor, ActorId, ActorKind, ManagedBy, Snapshot};
use crate::{Pose, Vec3};
use bytes::{Buf, BufMut};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

pub const DETECTED_MAGIC: [u8; 4] = *b"GTD1";
pub const TRACKED_MAGIC: [u8; 4] = *b"GTT1";
pub const PREDICTED_MAGIC: [u8; 4] = *b"GTP1";

const STAMP_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GroundTruthError {
    #[error("snapshot stamp {stamp} is not after the previous stamp {previous}")]
    NonMonotoneStamp { previous: f64, stamp: f64 },
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthConfig {
    pub history_buffer: f64,
    pub prediction_horizon: f64,
    pub prediction_resolution: f64,
    /// How long a destroyed actor's track is still reported.
    pub grace_period: f64,
    /// Below this speed a vehicle or pedestrian gets a single-pose prediction.
    pub stationary_speed: f64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self {
            history_buffer: 2.0,
            prediction_horizon: 8.0,
            prediction_resolution: 0.5,
            grace_period: 0.5,
            stationary_speed: 0.1,
        }
    }
}

impl GroundTruthConfig {
    pub fn validate(&self) -> Result<(), GroundTruthError> {
        let positive = [
            ("history_buffer", self.history_buffer),
            ("prediction_horizon", self.prediction_horizon),
            ("prediction_resolution", self.prediction_resolution),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GroundTruthError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.grace_period >= 0.0) || !(self.stationary_speed >= 0.0) {
            return Err(GroundTruthError::Config("grace_period and stationary_speed must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of poses in a full prediction, the current pose included.
    pub fn prediction_len(&self) -> usize {
        (self.prediction_horizon / self.prediction_resolution + STAMP_EPS).floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Prop,
}

impl ObjectClass {
    pub fn of(kind: ActorKind) -> Self {
        match kind {
            ActorKind::EgoVehicle | ActorKind::Vehicle => Self::Car,
            ActorKind::Pedestrian => Self::Pedestrian,
            ActorKind::StaticProp => Self::Prop,
        }
    }

    fn code(self) -> u8 {
        match self {
            Self::Car => 0,
            Self::Pedestrian => 1,
            Self::Prop => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self, DecodeError> {
        match code {
            0 => Ok(Self::Car),
            1 => Ok(Self::Pedestrian),
            2 => Ok(Self::Prop),
            other => Err(DecodeError::Invalid { field: "object class", value: other as u64 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedObject {
    pub id: ActorId,
    pub class: ObjectClass,
    /// Pose of the bounding-box center.
    pub pose: Pose,
    /// Half extents of the bounding box.
    pub extent: Vec3,
    pub velocity: Vec3,
    pub stamp: f64,
}

impl DetectedObject {
    pub fn from_actor(actor: &Actor, stamp: f64) -> Self {
        Self {
            id: actor.id,
            class: ObjectClass::of(actor.kind),
            pose: actor.box_pose(),
            extent: actor.bbox_extent,
            velocity: actor.velocity,
            stamp,
        }
    }
}

/// One record per non-ego actor, in ascending id order.
pub fn detected_objects(snapshot: &Snapshot) -> Vec<DetectedObject> {
    snapshot.non_ego().map(|a| DetectedObject::from_actor(a, snapshot.sim_time)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub stamp: f64,
    pub pose: Pose,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub id: ActorId,
    pub class: ObjectClass,
    /// Oldest first.
    pub history: Vec<TrackSample>,
}

impl TrackedObject {
    pub fn span(&self) -> f64 {
        match (self.history.first(), self.history.last()) {
            (Some(a), Some(b)) => b.stamp - a.stamp,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Track {
    class: ObjectClass,
    history: VecDeque<TrackSample>,
    last_seen: f64,
}

/// Per-actor pose history over a sliding time window.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: GroundTruthConfig,
    last_stamp: Option<f64>,
    tracks: BTreeMap<ActorId, Track>,
}

impl Tracker {
    pub fn new(config: GroundTruthConfig) -> Self {
        Self { config, last_stamp: None, tracks: BTreeMap::new() }
    }

    pub fn config(&self) -> &GroundTruthConfig {
        &self.config
    }

    /// Appends the snapshot to every non-ego track and returns the tracks
    /// that are alive or still within their grace period.
    pub fn update(&mut self, snapshot: &Snapshot) -> Result<Vec<TrackedObject>, GroundTruthError> {
        let now = snapshot.sim_time;
        if let Some(previous) = self.last_stamp {
            if !(now > previous) {
                return Err(GroundTruthError::NonMonotoneStamp { previous, stamp: now });
            }
        }
        self.last_stamp = Some(now);

        for actor in snapshot.non_ego() {
            let track = self.tracks.entry(actor.id).or_insert_with(|| Track {
                class: ObjectClass::of(actor.kind),
                history: VecDeque::new(),
                last_seen: now,
            });
            track.last_seen = now;
            track.history.push_back(TrackSample { stamp: now, pose: actor.pose, velocity: actor.velocity });
        }

        let cutoff = now - self.config.history_buffer + STAMP_EPS;
        let grace = self.config.grace_period;
        self.tracks.retain(|_, track| {
            while track.history.front().is_some_and(|s| s.stamp < cutoff) {
                track.history.pop_front();
            }
            !track.history.is_empty() && now - track.last_seen <= grace + STAMP_EPS
        });

        Ok(self
            .tracks
            .iter()
            .map(|(&id, t)| TrackedObject { id, class: t.class, history: t.history.iter().copied().collect() })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    AgentPlan,
    RoadWaypoints,
    /// Straight-line continuation at the current velocity.
    Extrapolation,
    /// Not moving: the current pose only.
    Stationary,
}

impl PredictionSource {
    fn code(self) -> u8 {
        match self {
            Self::AgentPlan => 0,
            Self::RoadWaypoints => 1,
            Self::Extrapolation => 2,
            Self::Stationary => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self, DecodeError> {
        match code {
            0 => Ok(Self::AgentPlan),
            1 => Ok(Self::RoadWaypoints),
            2 => Ok(Self::Extrapolation),
            3 => Ok(Self::Stationary),
            other => Err(DecodeError::Invalid { field: "prediction source", value: other as u64 }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanPoint {
    pub stamp: f64,
    pub pose: Pose,
}

/// Planned waypoints of traffic agents, keyed by the vehicle they drive.
pub type AgentPlans = BTreeMap<ActorId, Vec<PlanPoint>>;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedObject {
    pub id: ActorId,
    pub source: PredictionSource,
    pub path: Vec<PlanPoint>,
}

/// Future path of every non-ego actor except static props.
pub fn predicted_objects(
    snapshot: &Snapshot,
    road: &RoadNetwork,
    plans: &AgentPlans,
    config: &GroundTruthConfig,
) -> Vec<PredictedObject> {
    snapshot
        .non_ego()
        .filter(|a| a.kind != ActorKind::StaticProp)
        .map(|a| predict_actor(a, snapshot.sim_time, road, plans, config))
        .collect()
}

fn predict_actor(
    actor: &Actor,
    now: f64,
    road: &RoadNetwork,
    plans: &AgentPlans,
    config: &GroundTruthConfig,
) -> PredictedObject {
    let res = config.prediction_resolution;
    let stamp_at = |k: usize| now + k as f64 * res;
    let single = |source| PredictedObject {
        id: actor.id,
        source,
        path: vec![PlanPoint { stamp: now, pose: actor.pose }],
    };

    if matches!(actor.managed_by, ManagedBy::TrafficAgent { .. }) {
        if let Some(plan) = plans.get(&actor.id) {
            let end = now + config.prediction_horizon + STAMP_EPS;
            let path: Vec<PlanPoint> =
                plan.iter().copied().filter(|p| p.stamp >= now - STAMP_EPS && p.stamp <= end).collect();
            if !path.is_empty() {
                return PredictedObject { id: actor.id, source: PredictionSource::AgentPlan, path };
            }
        }
    }

    let speed = actor.speed();
    if speed < config.stationary_speed {
        return single(PredictionSource::Stationary);
    }
    let steps = config.prediction_len() - 1;

    if actor.kind == ActorKind::Vehicle && !road.is_empty() {
        let heading = actor.velocity.y.atan2(actor.velocity.x);
        if let Ok(proj) = road.project_aligned(&actor.pose.position, heading) {
            if let Ok(mut walker) = LaneWalker::new(road, proj.lane, proj.s, actor.id.0) {
                let spacing = speed * res;
                let mut path = vec![PlanPoint { stamp: now, pose: walker.pose() }];
                for k in 1..=steps {
                    if walker.advance(spacing) < spacing - 1e-9 {
                        break;
                    }
                    path.push(PlanPoint { stamp: stamp_at(k), pose: walker.pose() });
                }
                return PredictedObject { id: actor.id, source: PredictionSource::RoadWaypoints, path };
            }
        }
    }

    let heading = actor.velocity.y.atan2(actor.velocity.x);
    let path = (0..=steps)
        .map(|k| {
            let position = actor.pose.position + actor.velocity * (k as f64 * res);
            PlanPoint { stamp: stamp_at(k), pose: Pose::new(position, 0.0, 0.0, heading) }
        })
        .collect();
    PredictedObject { id: actor.id, source: PredictionSource::Extrapolation, path }
}

fn put_record(buf: &mut Vec<u8>, body: impl FnOnce(&mut Vec<u8>)) {
    let at = buf.len();
    buf.put_u32_le(0);
    body(buf);
    let len = (buf.len() - at - 4) as u32;
    buf[at..at + 4].copy_from_slice(&len.to_le_bytes());
}

fn get_record<'a>(buf: &mut &'a [u8]) -> Result<&'a [u8], DecodeError> {
    let len = get_u32(buf)? as usize;
    need(buf, len)?;
    let (record, rest) = buf.split_at(len);
    *buf = rest;
    Ok(record)
}

fn put_header(buf: &mut Vec<u8>, magic: [u8; 4], stamp: f64, count: usize) {
    buf.put_slice(&magic);
    buf.put_f64_le(stamp);
    buf.put_u32_le(count as u32);
}

fn get_header(buf: &mut &[u8], magic: [u8; 4]) -> Result<(f64, usize), DecodeError> {
    get_magic(buf, magic)?;
    Ok((get_f64(buf)?, get_u32(buf)? as usize))
}

pub fn encode_detected(stamp: f64, objects: &[DetectedObject]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + objects.len() * 113);
    put_header(&mut buf, DETECTED_MAGIC, stamp, objects.len());
    for o in objects {
        put_record(&mut buf, |b| {
            b.put_u64_le(o.id.0);
            b.put_u8(o.class.code());
            put_pose(b, &o.pose);
            put_vec3(b, &o.extent);
            put_vec3(b, &o.velocity);
            b.put_f64_le(o.stamp);
        });
    }
    buf
}

pub fn decode_detected(mut raw: &[u8]) -> Result<(f64, Vec<DetectedObject>), DecodeError> {
    let (stamp, count) = get_header(&mut raw, DETECTED_MAGIC)?;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let mut r = get_record(&mut raw)?;
        out.push(DetectedObject {
            id: ActorId(get_u64(&mut r)?),
            class: ObjectClass::from_code(get_u8(&mut r)?)?,
            pose: get_pose(&mut r)?,
            extent: get_vec3(&mut r)?,
            velocity: get_vec3(&mut r)?,
            stamp: get_f64(&mut r)?,
        });
    }
    Ok((stamp, out))
}

pub fn encode_tracked(stamp: f64, objects: &[TrackedObject]) -> Vec<u8> {
    let mut buf = Vec::new();
    put_header(&mut buf, TRACKED_MAGIC, stamp, objects.len());
    for o in objects {
        put_record(&mut buf, |b| {
            b.put_u64_le(o.id.0);
            b.put_u8(o.class.code());
            b.put_u32_le(o.history.len() as u32);
            for s in &o.history {
                b.put_f64_le(s.stamp);
                put_pose(b, &s.pose);
                put_vec3(b, &s.velocity);
            }
        });
    }
    buf
}

pub fn decode_tracked(mut raw: &[u8]) -> Result<(f64, Vec<TrackedObject>), DecodeError> {
    let (stamp, count) = get_header(&mut raw, TRACKED_MAGIC)?;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let mut r = get_record(&mut raw)?;
        let id = ActorId(get_u64(&mut r)?);
        let class = ObjectClass::from_code(get_u8(&mut r)?)?;
        let n = get_u32(&mut r)? as usize;
        let mut history = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            history.push(TrackSample {
                stamp: get_f64(&mut r)?,
                pose: get_pose(&mut r)?,
                velocity: get_vec3(&mut r)?,
            });
        }
        out.push(TrackedObject { id, class, history });
    }
    Ok((stamp, out))
}

pub fn encode_predicted(stamp: f64, objects: &[PredictedObject]) -> Vec<u8> {
    let mut buf = Vec::new();
    put_header(&mut buf, PREDICTED_MAGIC, stamp, objects.len());
    for o in objects {
        put_record(&mut buf, |b| {
            b.put_u64_le(o.id.0);
            b.put_u8(o.source.code());
            b.put_u32_le(o.path.len() as u32);
            for p in &o.path {
                b.put_f64_le(p.stamp);
                put_pose(b, &p.pose);
            }
        });
    }
    buf
}

pub fn decode_predicted(mut raw: &[u8]) -> Result<(f64, Vec<PredictedObject>), DecodeError> {
    let (stamp, count) = get_header(&mut raw, PREDICTED_MAGIC)?;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let mut r = get_record(&mut raw)?;
        let id = ActorId(get_u64(&mut r)?);
        let source = PredictionSource::from_code(get_u8(&mut r)?)?;
        let n = get_u32(&mut r)? as usize;
        let mut path = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            path.push(PlanPoint { stamp: get_f64(&mut r)?, pose: get_pose(&mut r)? });
        }
        out.push(PredictedObject { id, source, path });
    }
    Ok((stamp, out))
}

/// Record count of any ground-truth payload, read from the header only.
pub fn record_count(mut raw: &[u8]) -> Result<usize, DecodeError> {
    need(&raw, 16)?;
    raw.advance(12);
    Ok(get_u32(&mut raw)? as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::Lane;
    use proptest::prelude::*;

    fn actor(id: u64, kind: ActorKind, x: f64, y: f64, velocity: Vec3) -> Actor {
        Actor {
            id: ActorId(id),
            kind,
            pose: Pose::planar(x, y, velocity.y.atan2(velocity.x)),
            velocity,
            acceleration: Vec3::zeros(),
            yaw_rate: 0.0,
            bbox_extent: Vec3::new(2.4, 1.0, 0.8),
            managed_by: ManagedBy::None,
        }
    }

    fn straight() -> RoadNetwork {
        RoadNetwork::new(vec![Lane::new(1, 3.5, vec![Vec3::zeros(), Vec3::new(500.0, 0.0, 0.0)], vec![])]).unwrap()
    }

    #[test]
    fn ego_only_snapshot_has_no_detections() {
        let snap = Snapshot::new(0.0, 0, Some(ActorId(1)), vec![actor(1, ActorKind::EgoVehicle, 0.0, 0.0, Vec3::zeros())]);
        assert!(detected_objects(&snap).is_empty());
    }

    #[test]
    fn detections_echo_extent_and_box_center() {
        let mut a = actor(4, ActorKind::Vehicle, 3.0, 1.0, Vec3::new(2.0, 0.0, 0.0));
        a.bbox_extent = Vec3::new(1.7, 0.9, 0.75);
        let snap = Snapshot::new(1.5, 30, None, vec![a.clone()]);
        let d = &detected_objects(&snap)[0];
        assert_eq!(d.extent, a.bbox_extent);
        assert_eq!(d.pose.position, Vec3::new(3.0, 1.0, 0.75));
        assert_eq!(d.stamp, 1.5);
        assert_eq!(d.class, ObjectClass::Car);
    }

    fn feed(tracker: &mut Tracker, n: usize, dt: f64) -> Vec<TrackedObject> {
        let mut last = Vec::new();
        for k in 0..n {
            let t = k as f64 * dt;
            let a = actor(2, ActorKind::Vehicle, t, 0.0, Vec3::new(1.0, 0.0, 0.0));
            last = tracker.update(&Snapshot::new(t, k as u64, None, vec![a])).unwrap();
        }
        last
    }

    #[test]
    fn history_fills_to_buffer_then_slides() {
        let dt = 0.05;
        let expected = (2.0_f64 / dt).round() as usize;
        let mut tracker = Tracker::new(GroundTruthConfig::default());
        assert_eq!(feed(&mut tracker, 40, dt)[0].history.len(), expected);
        let mut tracker = Tracker::new(GroundTruthConfig::default());
        let tracks = feed(&mut tracker, 60, dt);
        assert_eq!(tracks[0].history.len(), expected);
        let span = tracks[0].span();
        assert!(span >= 2.0 - dt - 1e-9 && span <= 2.0, "span {span}");
    }

    #[test]
    fn out_of_order_stamp_is_rejected() {
        let mut tracker = Tracker::new(GroundTruthConfig::default());
        tracker.update(&Snapshot::new(1.0, 20, None, vec![])).unwrap();
        for t in [1.0, 0.95] {
            assert!(matches!(
                tracker.update(&Snapshot::new(t, 19, None, vec![])),
                Err(GroundTruthError::NonMonotoneStamp { .. })
            ));
        }
    }

    #[test]
    fn destroyed_actor_survives_grace_period_only() {
        let mut tracker = Tracker::new(GroundTruthConfig::default());
        feed(&mut tracker, 10, 0.05);
        let mut alive_until = 0.0;
        for k in 10..40 {
            let t = k as f64 * 0.05;
            if !tracker.update(&Snapshot::new(t, k, None, vec![])).unwrap().is_empty() {
                alive_until = t;
            }
        }
        assert!((alive_until - (0.45 + 0.5)).abs() < 1e-9, "dropped at {alive_until}");
    }

    #[test]
    fn unmanaged_vehicle_follows_lane_at_its_speed() {
        let cfg = GroundTruthConfig::default();
        let car = actor(3, ActorKind::Vehicle, 20.0, 0.4, Vec3::new(10.0, 0.0, 0.0));
        let snap = Snapshot::new(2.0, 40, None, vec![car]);
        let p = &predicted_objects(&snap, &straight(), &AgentPlans::new(), &cfg)[0];
        assert_eq!(p.source, PredictionSource::RoadWaypoints);
        let n = (8.0_f64 / 0.5) as usize + 1;
        assert_eq!(p.path.len(), n);
        for (k, point) in p.path.iter().enumerate() {
            assert!((point.stamp - (2.0 + 0.5 * k as f64)).abs() < 1e-12);
            assert!((point.pose.position.x - (20.0 + 5.0 * k as f64)).abs() < 1e-9);
            assert_eq!(point.pose.position.y, 0.0);
        }
    }

    #[test]
    fn stationary_vehicle_gets_single_pose() {
        let car = actor(3, ActorKind::Vehicle, 20.0, 0.0, Vec3::zeros());
        let snap = Snapshot::new(0.0, 0, None, vec![car.clone()]);
        let p = &predicted_objects(&snap, &straight(), &AgentPlans::new(), &GroundTruthConfig::default())[0];
        assert_eq!(p.source, PredictionSource::Stationary);
        assert_eq!(p.path, vec![PlanPoint { stamp: 0.0, pose: car.pose }]);
    }

    #[test]
    fn agent_prediction_is_plan_prefix() {
        let mut car = actor(5, ActorKind::Vehicle, 0.0, 0.0, Vec3::new(8.0, 0.0, 0.0));
        car.managed_by = ManagedBy::TrafficAgent { seed: 1 };
        let plan: Vec<PlanPoint> = (0..40)
            .map(|k| PlanPoint { stamp: 1.0 + 0.5 * k as f64, pose: Pose::planar(4.0 * k as f64, 1.0, 0.0) })
            .collect();
        let plans = AgentPlans::from([(car.id, plan.clone())]);
        let snap = Snapshot::new(1.0, 20, None, vec![car]);
        let p = &predicted_objects(&snap, &straight(), &plans, &GroundTruthConfig::default())[0];
        assert_eq!(p.source, PredictionSource::AgentPlan);
        assert_eq!(p.path[..], plan[..p.path.len()]);
        assert_eq!(p.path.len(), 17);
    }

    #[test]
    fn pedestrian_continues_in_a_straight_line() {
        let ped = actor(6, ActorKind::Pedestrian, 1.0, 1.0, Vec3::new(0.0, 1.4, 0.0));
        let snap = Snapshot::new(0.0, 0, None, vec![ped]);
        let p = &predicted_objects(&snap, &straight(), &AgentPlans::new(), &GroundTruthConfig::default())[0];
        assert_eq!(p.source, PredictionSource::Extrapolation);
        let last = p.path.last().unwrap();
        assert!((last.pose.position - Vec3::new(1.0, 1.0 + 1.4 * 8.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn payloads_round_trip() {
        let actors = vec![
            actor(2, ActorKind::Vehicle, 10.0, 0.0, Vec3::new(5.0, 0.0, 0.0)),
            actor(3, ActorKind::Pedestrian, 4.0, 3.0, Vec3::new(0.0, 1.0, 0.0)),
            actor(4, ActorKind::StaticProp, 9.0, 9.0, Vec3::zeros()),
        ];
        let snap = Snapshot::new(0.5, 10, None, actors);
        let det = detected_objects(&snap);
        assert_eq!(decode_detected(&encode_detected(0.5, &det)).unwrap(), (0.5, det.clone()));
        assert_eq!(record_count(&encode_detected(0.5, &det)).unwrap(), 3);
        let mut tracker = Tracker::new(GroundTruthConfig::default());
        let tracks = tracker.update(&snap).unwrap();
        assert_eq!(decode_tracked(&encode_tracked(0.5, &tracks)).unwrap(), (0.5, tracks));
        let pred = predicted_objects(&snap, &straight(), &AgentPlans::new(), &GroundTruthConfig::default());
        assert_eq!(pred.len(), 2);
        assert_eq!(decode_predicted(&encode_predicted(0.5, &pred)).unwrap(), (0.5, pred));
        let raw = encode_detected(0.5, &det);
        assert!(matches!(decode_detected(&raw[..raw.len() - 3]), Err(DecodeError::Truncated { .. })));
    }

    fn kind_strategy() -> impl Strategy<Value = ActorKind> {
        prop_oneof![Just(ActorKind::Vehicle), Just(ActorKind::Pedestrian), Just(ActorKind::StaticProp)]
    }

    proptest! {
        #[test]
        fn detected_ids_equal_non_ego_ids(
            kinds in prop::collection::vec(kind_strategy(), 0..30),
            ego_slot in prop::option::of(0usize..30),
        ) {
            let mut actors: Vec<Actor> = kinds
                .iter()
                .enumerate()
                .map(|(i, &k)| actor(i as u64 + 1, k, i as f64 * 5.0, 0.0, Vec3::zeros()))
                .collect();
            let ego = ego_slot.filter(|&i| i < actors.len()).map(|i| {
                actors[i].kind = ActorKind::EgoVehicle;
                actors[i].id
            });
            let snap = Snapshot::new(0.0, 0, ego, actors.clone());
            let got: Vec<ActorId> = detected_objects(&snap).iter().map(|d| d.id).collect();
            let want: Vec<ActorId> = actors.iter().map(|a| a.id).filter(|&id| Some(id) != ego).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn road_predictions_stay_on_centerline(x in 0.0..400.0f64, y in -1.5..1.5f64, v in 0.5..30.0f64) {
            let car = actor(9, ActorKind::Vehicle, x, y, Vec3::new(v, 0.0, 0.0));
            let snap = Snapshot::new(0.0, 0, None, vec![car]);
            let road = straight();
            let p = &predicted_objects(&snap, &road, &AgentPlans::new(), &GroundTruthConfig::default())[0];
            prop_assert!(!p.path.is_empty());
            for w in p.path.windows(2) {
                prop_assert!((w[1].stamp - w[0].stamp - 0.5).abs() < 1e-9);
            }
            for point in &p.path {
                prop_assert!(road.project(&point.pose.position).unwrap().distance <= 1.75);
            }
        }
    }
}
