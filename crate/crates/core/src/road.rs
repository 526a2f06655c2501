//! Lane-graph road network: JSON loading, nearest-point queries and seeded
//! route generation.

use crate::geometry::{normalize_angle, planar_distance, project_on_segment, Pose, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

pub type LaneId = u32;

#[derive(Debug, Error)]
pub enum RoadError {
    #[error("failed to read road network {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse road network: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("lane {lane} lists unknown successor {successor}")]
    DanglingSuccessor { lane: LaneId, successor: LaneId },
    #[error("lane {0} needs at least two centerline points")]
    ShortCenterline(LaneId),
    #[error("lane {0} has non-positive width")]
    BadWidth(LaneId),
    #[error("lane id {0} appears twice")]
    DuplicateLane(LaneId),
    #[error("road network has no lanes")]
    EmptyRoad,
    #[error("unknown lane {0}")]
    UnknownLane(LaneId),
}

/// WGS84 anchor of the local ENU frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub alt: f64,
}

impl Default for GeoOrigin {
    fn default() -> Self {
        // Garching research campus.
        Self { lat: 48.2656, lon: 11.6712, alt: 480.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LaneFile {
    id: LaneId,
    width: f64,
    centerline: Vec<[f64; 3]>,
    #[serde(default)]
    successors: Vec<LaneId>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RoadFile {
    #[serde(default)]
    name: Option<String>,
    lanes: Vec<LaneFile>,
    #[serde(default)]
    crosswalks: Vec<Vec<[f64; 3]>>,
    #[serde(default)]
    sidewalks: Vec<Vec<[f64; 3]>>,
    #[serde(default)]
    geo_origin: Option<GeoOrigin>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub width: f64,
    pub centerline: Vec<Vec3>,
    pub successors: Vec<LaneId>,
    cumulative: Vec<f64>,
}

impl Lane {
    pub fn new(id: LaneId, width: f64, centerline: Vec<Vec3>, successors: Vec<LaneId>) -> Self {
        let mut cumulative = Vec::with_capacity(centerline.len());
        let mut acc = 0.0;
        for (i, p) in centerline.iter().enumerate() {
            if i > 0 {
                acc += planar_distance(&centerline[i - 1], p);
            }
            cumulative.push(acc);
        }
        Self { id, width, centerline, successors, cumulative }
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Pose on the centerline at arc length `s` (clamped to the lane).
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length());
        // Segment containing s; a point exactly on an interior vertex belongs
        // to the following segment.
        let seg = match self.cumulative.iter().rposition(|&c| c <= s) {
            Some(i) if i + 1 < self.centerline.len() => i,
            _ => self.centerline.len() - 2,
        };
        let (a, b) = (&self.centerline[seg], &self.centerline[seg + 1]);
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = if seg_len > 0.0 { (s - self.cumulative[seg]) / seg_len } else { 0.0 };
        let p = a + (b - a) * t;
        Pose::new(p, 0.0, 0.0, (b.y - a.y).atan2(b.x - a.x))
    }

    fn segment_yaw(&self, seg: usize) -> f64 {
        let (a, b) = (&self.centerline[seg], &self.centerline[seg + 1]);
        (b.y - a.y).atan2(b.x - a.x)
    }
}

/// Result of projecting a point onto the lane graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadProjection {
    pub lane: LaneId,
    pub s: f64,
    pub distance: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, Default)]
pub struct RoadNetwork {
    pub name: Option<String>,
    lanes: BTreeMap<LaneId, Lane>,
    pub crosswalks: Vec<Vec<Vec3>>,
    pub sidewalks: Vec<Vec<Vec3>>,
    pub geo_origin: GeoOrigin,
}

fn to_points(raw: &[[f64; 3]]) -> Vec<Vec3> {
    raw.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()
}

fn from_points(points: &[Vec3]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

impl RoadNetwork {
    pub fn new(lanes: Vec<Lane>) -> Result<Self, RoadError> {
        let mut map = BTreeMap::new();
        for lane in lanes {
            if lane.centerline.len() < 2 {
                return Err(RoadError::ShortCenterline(lane.id));
            }
            if !(lane.width > 0.0) {
                return Err(RoadError::BadWidth(lane.id));
            }
            let id = lane.id;
            if map.insert(id, lane).is_some() {
                return Err(RoadError::DuplicateLane(id));
            }
        }
        for lane in map.values() {
            for succ in &lane.successors {
                if !map.contains_key(succ) {
                    return Err(RoadError::DanglingSuccessor { lane: lane.id, successor: *succ });
                }
            }
        }
        Ok(Self { lanes: map, ..Default::default() })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_json(text: &str) -> Result<Self, RoadError> {
        let file: RoadFile = serde_json::from_str(text)?;
        let lanes = file
            .lanes
            .iter()
            .map(|l| Lane::new(l.id, l.width, to_points(&l.centerline), l.successors.clone()))
            .collect();
        let mut road = Self::new(lanes)?;
        road.name = file.name;
        road.crosswalks = file.crosswalks.iter().map(|c| to_points(c)).collect();
        road.sidewalks = file.sidewalks.iter().map(|c| to_points(c)).collect();
        road.geo_origin = file.geo_origin.unwrap_or_default();
        Ok(road)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RoadError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = RoadFile {
            name: self.name.clone(),
            lanes: self
                .lanes
                .values()
                .map(|l| LaneFile {
                    id: l.id,
                    width: l.width,
                    centerline: from_points(&l.centerline),
                    successors: l.successors.clone(),
                })
                .collect(),
            crosswalks: self.crosswalks.iter().map(|c| from_points(c)).collect(),
            sidewalks: self.sidewalks.iter().map(|c| from_points(c)).collect(),
            geo_origin: Some(self.geo_origin),
        };
        serde_json::to_string_pretty(&file).expect("road network serializes")
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.lanes.get(&id)
    }

    /// Lanes in ascending id order.
    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.values()
    }

    /// Axis-aligned (min, max) corners over all centerline points.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut points = self
            .lanes
            .values()
            .flat_map(|l| l.centerline.iter())
            .chain(self.crosswalks.iter().flatten())
            .chain(self.sidewalks.iter().flatten());
        let first = *points.next()?;
        Some(points.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    /// Closest point on any lane centerline.
    ///
    /// Exact distance ties go to the lowest lane id; a query on an interior
    /// vertex takes the tangent of the following segment.
    pub fn project(&self, position: &Vec3) -> Result<RoadProjection, RoadError> {
        self.project_where(position, |_| true).ok_or(RoadError::EmptyRoad)
    }

    /// Like [`project`](Self::project) but restricted to segments running
    /// within 90° of `yaw`, so opposing lanes are skipped. Falls back to the
    /// unrestricted projection when no segment qualifies.
    pub fn project_aligned(&self, position: &Vec3, yaw: f64) -> Result<RoadProjection, RoadError> {
        match self.project_where(position, |seg_yaw| normalize_angle(seg_yaw - yaw).abs() < FRAC_PI_2) {
            Some(p) => Ok(p),
            None => self.project(position),
        }
    }

    fn project_where(&self, position: &Vec3, accept: impl Fn(f64) -> bool) -> Option<RoadProjection> {
        let mut best: Option<RoadProjection> = None;
        for lane in self.lanes.values() {
            let segments = lane.centerline.len() - 1;
            for seg in 0..segments {
                let (a, b) = (&lane.centerline[seg], &lane.centerline[seg + 1]);
                let (point, t) = project_on_segment(position, a, b);
                let distance = planar_distance(position, &point);
                if best.is_some_and(|b| distance >= b.distance) || !accept(lane.segment_yaw(seg)) {
                    continue;
                }
                let seg_len = lane.cumulative[seg + 1] - lane.cumulative[seg];
                let yaw = if t >= 1.0 && seg + 1 < segments {
                    lane.segment_yaw(seg + 1)
                } else {
                    lane.segment_yaw(seg)
                };
                best = Some(RoadProjection {
                    lane: lane.id,
                    s: lane.cumulative[seg] + t * seg_len,
                    distance,
                    pose: Pose::new(point, 0.0, 0.0, yaw),
                });
            }
        }
        best
    }

    pub fn nearest_road_point(&self, position: &Vec3) -> Result<Pose, RoadError> {
        self.project(position).map(|p| p.pose)
    }

    /// Poses every `spacing` meters from the start of `from_lane`, following
    /// successors chosen by a RNG seeded with `seed`. Stops silently at dead
    /// ends, in which case the dead-end point closes the list.
    pub fn route_waypoints(
        &self,
        from_lane: LaneId,
        spacing: f64,
        horizon: f64,
        seed: u64,
    ) -> Result<Vec<Pose>, RoadError> {
        let mut walker = LaneWalker::new(self, from_lane, 0.0, seed)?;
        Ok(walker.sample(spacing, horizon))
    }
}

/// Cursor moving along the lane graph by arc length, picking successors at
/// branches with its own seeded RNG.
#[derive(Debug, Clone)]
pub struct LaneWalker<'a> {
    road: &'a RoadNetwork,
    lane: LaneId,
    s: f64,
    rng: ChaCha8Rng,
}

impl<'a> LaneWalker<'a> {
    pub fn new(road: &'a RoadNetwork, lane: LaneId, s: f64, seed: u64) -> Result<Self, RoadError> {
        Self::with_rng(road, lane, s, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(
        road: &'a RoadNetwork,
        lane: LaneId,
        s: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self, RoadError> {
        road.lane(lane).ok_or(RoadError::UnknownLane(lane))?;
        Ok(Self { road, lane, s, rng })
    }

    pub fn lane(&self) -> LaneId {
        self.lane
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn pose(&self) -> Pose {
        self.road.lanes[&self.lane].pose_at(self.s)
    }

    /// Moves `ds` meters forward. Returns the distance actually covered,
    /// which is shorter than `ds` only at a dead end.
    pub fn advance(&mut self, ds: f64) -> f64 {
        let mut remaining = ds;
        loop {
            let lane = &self.road.lanes[&self.lane];
            let left = lane.length() - self.s;
            if remaining <= left {
                self.s += remaining;
                return ds;
            }
            let next = match lane.successors.len() {
                0 => {
                    self.s = lane.length();
                    return ds - (remaining - left);
                }
                1 => lane.successors[0],
                n => lane.successors[self.rng.random_range(0..n)],
            };
            remaining -= left;
            self.lane = next;
            self.s = 0.0;
        }
    }

    /// Poses every `spacing` meters up to `horizon` meters ahead, including
    /// the current pose. A dead end closes the list with its end point.
    pub fn sample(&mut self, spacing: f64, horizon: f64) -> Vec<Pose> {
        let mut out = vec![self.pose()];
        if !(spacing > 0.0) {
            return out;
        }
        let steps = (horizon / spacing + 1e-9).floor() as usize;
        for _ in 0..steps {
            let covered = self.advance(spacing);
            if covered < spacing {
                if covered > 1e-9 {
                    out.push(self.pose());
                }
                break;
            }
            out.push(self.pose());
        }
        out
    }
}
