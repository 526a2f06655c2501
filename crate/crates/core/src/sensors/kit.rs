use super::camera::{CameraInfo, CameraSampler};
use super::config::{GnssParams, ImuParams, SensorKind, SensorParams, SensorSpec};
use super::lidar::LidarSampler;
use super::nav::{GnssFix, ImuSample, Odometry};
use super::scene::Scene;
use super::{SensorError, BASE_FRAME};
use crate::codec::{get_magic, get_str, get_u32, get_vec3, put_str, put_vec3, DecodeError};
use crate::road::GeoOrigin;
use crate::world::Snapshot;
use crate::Vec3;
use bytes::BufMut;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

pub const TF_MAGIC: [u8; 4] = *b"TFS1";

#[derive(Debug, Clone, PartialEq)]
pub struct TransformEdge {
    pub parent: String,
    pub child: String,
    pub translation: Vec3,
    /// Roll, pitch, yaw in radians.
    pub rotation: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformTree {
    pub edges: Vec<TransformEdge>,
}

impl TransformTree {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.put_slice(&TF_MAGIC);
        buf.put_u32_le(self.edges.len() as u32);
        for e in &self.edges {
            put_str(&mut buf, &e.parent);
            put_str(&mut buf, &e.child);
            put_vec3(&mut buf, &e.translation);
            put_vec3(&mut buf, &e.rotation);
        }
        buf
    }

    pub fn decode(mut raw: &[u8]) -> Result<Self, DecodeError> {
        get_magic(&mut raw, TF_MAGIC)?;
        let n = get_u32(&mut raw)?;
        let mut edges = Vec::with_capacity(n as usize);
        for _ in 0..n {
            edges.push(TransformEdge {
                parent: get_str(&mut raw)?,
                child: get_str(&mut raw)?,
                translation: get_vec3(&mut raw)?,
                rotation: get_vec3(&mut raw)?,
            });
        }
        Ok(Self { edges })
    }
}

/// One `base_link → frame_id` edge per mount.
pub fn static_transforms(specs: &[SensorSpec]) -> Result<TransformTree, SensorError> {
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(specs.len());
    for spec in specs {
        let m = &spec.mount;
        if m.frame_id == BASE_FRAME || !seen.insert(m.frame_id.clone()) {
            return Err(SensorError::DuplicateFrame(m.frame_id.clone()));
        }
        edges.push(TransformEdge {
            parent: BASE_FRAME.to_string(),
            child: m.frame_id.clone(),
            translation: m.translation,
            rotation: m.rotation,
        });
    }
    Ok(TransformTree { edges })
}

/// Shared per-mount enable flags, read by each node at every firing.
#[derive(Debug, Clone, Default)]
pub struct EnableMap(Arc<RwLock<BTreeMap<String, bool>>>);

impl EnableMap {
    pub fn new(initial: impl IntoIterator<Item = (String, bool)>) -> Self {
        Self(Arc::new(RwLock::new(initial.into_iter().collect())))
    }

    /// Returns whether the state changed.
    pub fn set(&self, mount: &str, enabled: bool) -> Result<bool, SensorError> {
        let mut map = self.0.write().unwrap();
        let slot = map.get_mut(mount).ok_or_else(|| SensorError::UnknownMount(mount.to_string()))?;
        let changed = *slot != enabled;
        *slot = enabled;
        Ok(changed)
    }

    pub fn is_enabled(&self, mount: &str) -> Result<bool, SensorError> {
        self.0.read().unwrap().get(mount).copied().ok_or_else(|| SensorError::UnknownMount(mount.to_string()))
    }

    pub fn states(&self) -> BTreeMap<String, bool> {
        self.0.read().unwrap().clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorOutput {
    pub topic: String,
    pub stamp: f64,
    pub payload: Vec<u8>,
}

/// Number of world ticks between firings: `round(tick / dt)`, at least 1.
pub fn period_ticks(sensor_tick: f64, dt: f64) -> u64 {
    ((sensor_tick / dt).round() as u64).max(1)
}

#[derive(Debug, Clone, Copy)]
struct Schedule {
    period: u64,
    next_due: u64,
}

impl Schedule {
    /// Fires on the first frame at or after the due tick, then realigns to
    /// the period grid so missed frames do not shift later firings.
    fn take(&mut self, tick: u64) -> bool {
        if tick < self.next_due {
            return false;
        }
        self.next_due = (tick / self.period + 1) * self.period;
        true
    }
}

enum Sampler {
    Lidar(Box<LidarSampler>),
    Camera(Box<CameraSampler>),
    Gnss(GnssParams),
    Imu(ImuParams),
    Odometry,
    GnssImu { gnss: GnssParams, imu: ImuParams },
}

/// One mounted sensor. Owns its samplers and RNG; reads world state only
/// through snapshots.
pub struct SensorNode {
    spec: SensorSpec,
    topics: BTreeMap<&'static str, String>,
    sampler: Sampler,
    primary: Schedule,
    secondary: Option<Schedule>,
    enable: EnableMap,
    origin: GeoOrigin,
    rng: ChaCha8Rng,
}

fn name_seed(name: &str) -> u64 {
    // FNV-1a keeps per-sensor seeds stable across runs and platforms.
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl SensorNode {
    fn new(spec: SensorSpec, dt: f64, enable: EnableMap, origin: GeoOrigin, seed: u64) -> Result<Self, SensorError> {
        let seed = seed ^ name_seed(&spec.mount.name);
        let primary = Schedule { period: period_ticks(spec.def.sensor_tick, dt), next_due: 0 };
        let mut secondary = None;
        let sampler = match &spec.def.params {
            SensorParams::Lidar(p) => Sampler::Lidar(Box::new(LidarSampler::new(p.clone(), seed)?)),
            SensorParams::Camera(p) => Sampler::Camera(Box::new(CameraSampler::new(p))),
            SensorParams::Gnss(p) => Sampler::Gnss(p.clone()),
            SensorParams::Imu(p) => Sampler::Imu(p.clone()),
            SensorParams::Odometry => Sampler::Odometry,
            SensorParams::GnssImu { gnss, imu, imu_tick } => {
                secondary = Some(Schedule { period: period_ticks(*imu_tick, dt), next_due: 0 });
                Sampler::GnssImu { gnss: gnss.clone(), imu: imu.clone() }
            }
        };
        let topics = spec.output_topics();
        Ok(Self {
            spec,
            topics,
            sampler,
            primary,
            secondary,
            enable,
            origin,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)),
        })
    }

    pub fn name(&self) -> &str {
        &self.spec.mount.name
    }

    pub fn kind(&self) -> SensorKind {
        self.spec.def.kind
    }

    pub fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.values().map(String::as_str)
    }

    pub fn period_ticks(&self) -> u64 {
        self.primary.period
    }

    pub fn is_due(&self, tick: u64) -> bool {
        tick >= self.primary.next_due || self.secondary.is_some_and(|s| tick >= s.next_due)
    }

    pub fn lidar(&self) -> Option<&LidarSampler> {
        match &self.sampler {
            Sampler::Lidar(l) => Some(l),
            _ => None,
        }
    }

    /// Samples whatever is due at this frame. Disabled sensors keep their
    /// schedule but produce nothing.
    pub fn fire(&mut self, snapshot: &Snapshot) -> Result<Vec<SensorOutput>, SensorError> {
        let tick = snapshot.tick_index;
        let primary = self.primary.take(tick);
        let secondary = self.secondary.as_mut().is_some_and(|s| s.take(tick));
        if !(primary || secondary) || !self.enable.is_enabled(&self.spec.mount.name)? {
            return Ok(Vec::new());
        }
        let ego = snapshot.ego_actor().ok_or(SensorError::NoEgo)?;
        let stamp = snapshot.sim_time;
        let frame = self.spec.mount.frame_id.as_str();
        let sensor_pose = ego.pose.compose(&self.spec.mount.pose());
        let topic = |key: &str| self.topics[key].clone();
        let mut out = Vec::new();
        match &mut self.sampler {
            Sampler::Lidar(lidar) => {
                let scene = Scene::from_snapshot(snapshot, Some(ego.id));
                let cloud = lidar.scan(&sensor_pose, &scene, stamp, frame);
                out.push(SensorOutput { topic: topic("points"), stamp, payload: cloud.encode() });
            }
            Sampler::Camera(cam) => {
                let scene = Scene::from_snapshot(snapshot, Some(ego.id));
                let image = cam.render(&sensor_pose, &scene, stamp, frame);
                let info: CameraInfo = *cam.info();
                out.push(SensorOutput { topic: topic("image"), stamp, payload: image.encode() });
                out.push(SensorOutput { topic: topic("camera_info"), stamp, payload: info.encode(stamp, frame) });
            }
            Sampler::Gnss(p) => {
                let fix = GnssFix::sample(&sensor_pose.position, &self.origin, p, &mut self.rng, stamp, frame);
                out.push(SensorOutput { topic: topic("fix"), stamp, payload: fix.encode() });
            }
            Sampler::Imu(p) => {
                let s = ImuSample::sample(ego, p, &mut self.rng, stamp, frame);
                out.push(SensorOutput { topic: topic("imu"), stamp, payload: s.encode() });
            }
            Sampler::Odometry => {
                let odo = Odometry::sample(ego, stamp, BASE_FRAME);
                out.push(SensorOutput { topic: topic("odometry"), stamp, payload: odo.encode() });
            }
            Sampler::GnssImu { gnss, imu } => {
                if primary {
                    let fix = GnssFix::sample(&sensor_pose.position, &self.origin, gnss, &mut self.rng, stamp, frame);
                    out.push(SensorOutput { topic: topic("fix"), stamp, payload: fix.encode() });
                }
                if secondary {
                    let s = ImuSample::sample(ego, imu, &mut self.rng, stamp, frame);
                    out.push(SensorOutput { topic: topic("imu"), stamp, payload: s.encode() });
                }
            }
        }
        Ok(out)
    }
}

pub struct SensorKit {
    nodes: Vec<SensorNode>,
    enable: EnableMap,
    transforms: TransformTree,
}

/// Instantiates one node per mount. The snapshot must contain the ego.
pub fn build_sensor_kit(
    specs: Vec<SensorSpec>,
    dt: f64,
    snapshot: &Snapshot,
    origin: GeoOrigin,
    seed: u64,
) -> Result<SensorKit, SensorError> {
    if snapshot.ego_actor().is_none() {
        return Err(SensorError::NoEgo);
    }
    let transforms = static_transforms(&specs)?;
    let enable = EnableMap::new(specs.iter().map(|s| (s.mount.name.clone(), s.mount.enabled)));
    let nodes = specs
        .into_iter()
        .map(|spec| SensorNode::new(spec, dt, enable.clone(), origin, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SensorKit { nodes, enable, transforms })
}

impl SensorKit {
    pub fn nodes(&self) -> &[SensorNode] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [SensorNode] {
        &mut self.nodes
    }

    pub fn into_nodes(self) -> Vec<SensorNode> {
        self.nodes
    }

    pub fn enable_map(&self) -> EnableMap {
        self.enable.clone()
    }

    pub fn transforms(&self) -> &TransformTree {
        &self.transforms
    }

    pub fn set_sensor_enabled(&self, mount: &str, enabled: bool) -> Result<bool, SensorError> {
        self.enable.set(mount, enabled)
    }

    pub fn topics(&self) -> Vec<String> {
        self.nodes.iter().flat_map(|n| n.topics().map(str::to_string)).collect()
    }

    /// Fires every node in turn; convenient for single-threaded runs.
    pub fn fire_all(&mut self, snapshot: &Snapshot) -> Result<Vec<SensorOutput>, SensorError> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            out.extend(node.fire(snapshot)?);
        }
        Ok(out)
    }
}
