//! Closed lane loop and the pure-pursuit follower that drives the ego around
//! it during track experiments.

use super::HarnessError;
use hil_core::actuation::ControlCommand;
use hil_core::geometry::project_on_segment;
use hil_core::{LaneId, Pose, RoadNetwork, Vec3};

pub const LOOKAHEAD: f64 = 6.0;
pub const TARGET_SPEED: f64 = 5.0;
const SPEED_GAIN: f64 = 1.0;

/// A closed polyline built by following first successors from a lane until
/// the walk returns to it.
#[derive(Debug, Clone)]
pub struct LoopPath {
    lanes: Vec<LaneId>,
    points: Vec<Vec3>,
    /// Arc length at each point; the closing segment runs from the last
    /// point back to the first.
    cumulative: Vec<f64>,
    length: f64,
}

impl LoopPath {
    pub fn from_lane(road: &RoadNetwork, start: LaneId) -> Result<Self, HarnessError> {
        let no_loop = |why: String| HarnessError::NoLoop(why);
        let mut lanes = Vec::new();
        let mut points: Vec<Vec3> = Vec::new();
        let mut current = start;
        loop {
            if lanes.contains(&current) {
                return Err(no_loop(format!("lanes from {start} cycle through {current} without returning")));
            }
            let lane = road.lane(current).ok_or_else(|| no_loop(format!("lane {current} does not exist")))?;
            lanes.push(current);
            for p in &lane.centerline {
                if points.last().is_none_or(|last| (last - p).norm() > 1e-6) {
                    points.push(*p);
                }
            }
            current = *lane
                .successors
                .first()
                .ok_or_else(|| no_loop(format!("lane {} has no successor", lane.id)))?;
            if current == start {
                break;
            }
        }
        if points.len() > 1 && (points[0] - points[points.len() - 1]).norm() < 1e-6 {
            points.pop();
        }
        if points.len() < 3 {
            return Err(no_loop(format!("loop through lane {start} is degenerate")));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                total += (p - points[i - 1]).norm();
            }
            cumulative.push(total);
        }
        let length = total + (points[0] - points[points.len() - 1]).norm();
        Ok(Self { lanes, points, cumulative, length })
    }

    /// Loop through the lane the pose is on, matched against its heading.
    pub fn through(road: &RoadNetwork, pose: &Pose) -> Result<Self, HarnessError> {
        let lane = road
            .project_aligned(&pose.position, pose.yaw)
            .map_err(|e| HarnessError::NoLoop(e.to_string()))?
            .lane;
        Self::from_lane(road, lane)
    }

    pub fn lanes(&self) -> &[LaneId] {
        &self.lanes
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    fn segment(&self, i: usize) -> (Vec3, Vec3) {
        (self.points[i], self.points[(i + 1) % self.points.len()])
    }

    /// Arc length of the closest point and the planar distance to it.
    pub fn locate(&self, p: &Vec3) -> (f64, f64) {
        let flat = Vec3::new(p.x, p.y, 0.0);
        let mut best = (0.0, f64::INFINITY);
        for i in 0..self.points.len() {
            let (a, b) = self.segment(i);
            let (q, t) = project_on_segment(&flat, &Vec3::new(a.x, a.y, 0.0), &Vec3::new(b.x, b.y, 0.0));
            let d = (flat - q).norm();
            if d < best.1 {
                best = (self.cumulative[i] + t * (b - a).norm(), d);
            }
        }
        best
    }

    pub fn point_at(&self, s: f64) -> Vec3 {
        let s = s.rem_euclid(self.length);
        let i = self.cumulative.partition_point(|&c| c <= s).saturating_sub(1);
        let (a, b) = self.segment(i);
        let len = (b - a).norm();
        let t = if len > 0.0 { (s - self.cumulative[i]) / len } else { 0.0 };
        a + (b - a) * t
    }

    /// Signed change from `from` to `to`, taking the short way round.
    pub fn delta(&self, from: f64, to: f64) -> f64 {
        let d = (to - from).rem_euclid(self.length);
        if d > self.length / 2.0 {
            d - self.length
        } else {
            d
        }
    }
}

/// Follows a [`LoopPath`] at constant target speed, tracking progress in
/// laps.
#[derive(Debug, Clone)]
pub struct PurePursuit {
    path: LoopPath,
    wheelbase: f64,
    pub lookahead: f64,
    pub target_speed: f64,
    s: f64,
    progress: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PursuitStep {
    pub command: ControlCommand,
    pub cross_track: f64,
    /// Distance travelled along the loop since the start.
    pub progress: f64,
}

impl PurePursuit {
    pub fn new(path: LoopPath, wheelbase: f64, start: &Pose) -> Self {
        let s = path.locate(&start.position).0;
        Self { path, wheelbase, lookahead: LOOKAHEAD, target_speed: TARGET_SPEED, s, progress: 0.0 }
    }

    pub fn path(&self) -> &LoopPath {
        &self.path
    }

    pub fn laps(&self) -> f64 {
        self.progress / self.path.length
    }

    pub fn step(&mut self, pose: &Pose, speed: f64, stamp: f64) -> PursuitStep {
        let (s, cross_track) = self.path.locate(&pose.position);
        self.progress += self.path.delta(self.s, s);
        self.s = s;
        let target = self.path.point_at(s + self.lookahead);
        let local = pose.inverse_transform_point(&target);
        let alpha = local.y.atan2(local.x);
        let ld = local.x.hypot(local.y).max(1e-3);
        let steer = (2.0 * self.wheelbase * alpha.sin() / ld).atan();
        let accel = SPEED_GAIN * (self.target_speed - speed);
        PursuitStep { command: ControlCommand::new(steer, accel, stamp), cross_track, progress: self.progress }
    }
}
