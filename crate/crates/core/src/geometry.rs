//! Poses, angles and the small amount of solid geometry the simulator needs:
//! ground-plane footprint overlap and ray/box intersection.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec3 = Vector3<f64>;

/// Wraps an angle into (−π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Position in a right-handed ENU frame (z up) plus roll/pitch/yaw.
///
/// Yaw is measured counter-clockwise from +x. Rotations compose as
/// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    #[serde(default)]
    pub roll: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
        }
    }

    pub fn new(position: Vec3, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            position,
            roll: normalize_angle(roll),
            pitch: normalize_angle(pitch),
            yaw: normalize_angle(yaw),
        }
    }

    /// Planar pose at `(x, y, 0)` heading `yaw`.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(Vec3::new(x, y, 0.0), 0.0, 0.0, yaw)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, local: &Vec3) -> Vec3 {
        self.position + self.rotation() * local
    }

    pub fn transform_vector(&self, local: &Vec3) -> Vec3 {
        self.rotation() * local
    }

    /// Maps a point from the parent frame into this pose's local frame.
    pub fn inverse_transform_point(&self, world: &Vec3) -> Vec3 {
        self.rotation().inverse() * (world - self.position)
    }

    /// `self ∘ child`: the pose of `child` (expressed in this pose's frame)
    /// in the parent frame.
    pub fn compose(&self, child: &Pose) -> Pose {
        let rotation = self.rotation() * child.rotation();
        let (roll, pitch, yaw) = rotation.euler_angles();
        Pose::new(self.transform_point(&child.position), roll, pitch, yaw)
    }

    pub fn heading(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.roll.is_finite()
            && self.pitch.is_finite()
            && self.yaw.is_finite()
    }
}

/// Rectangle on the ground plane used for spawn-overlap checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub center: [f64; 2],
    pub half_extent: [f64; 2],
    pub yaw: f64,
}

impl Footprint {
    pub fn new(pose: &Pose, bbox_extent: &Vec3) -> Self {
        Self {
            center: [pose.position.x, pose.position.y],
            half_extent: [bbox_extent.x, bbox_extent.y],
            yaw: pose.yaw,
        }
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.yaw.sin_cos();
        [[c, s], [-s, c]]
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        let [ux, uy] = self.axes();
        let [hx, hy] = self.half_extent;
        let [cx, cy] = self.center;
        let mut out = [[0.0; 2]; 4];
        for (i, (sx, sy)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)]
            .into_iter()
            .enumerate()
        {
            out[i] = [
                cx + sx * hx * ux[0] + sy * hy * uy[0],
                cy + sx * hx * ux[1] + sy * hy * uy[1],
            ];
        }
        out
    }

    /// Separating-axis test. Boxes that only touch along an edge do not
    /// overlap.
    pub fn overlaps(&self, other: &Footprint) -> bool {
        let a = self.corners();
        let b = other.corners();
        for axis in self.axes().into_iter().chain(other.axes()) {
            let project = |pts: &[[f64; 2]; 4]| {
                pts.iter()
                    .map(|p| p[0] * axis[0] + p[1] * axis[1])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            };
            let (amin, amax) = project(&a);
            let (bmin, bmax) = project(&b);
            if amax <= bmin || bmax <= amin {
                return false;
            }
        }
        true
    }
}

/// Nearest forward hit of the ray `origin + t * dir` with the plane `z = 0`.
pub fn ray_ground(origin: &Vec3, dir: &Vec3) -> Option<f64> {
    if dir.z >= 0.0 || origin.z <= 0.0 {
        return None;
    }
    Some(-origin.z / dir.z)
}

/// Entry distance of a ray into an oriented box. Rays starting inside the box
/// report no hit.
pub fn ray_box(origin: &Vec3, dir: &Vec3, pose: &Pose, half_extent: &Vec3) -> Option<f64> {
    let inv = pose.rotation().inverse();
    let o = inv * (origin - pose.position);
    let d = inv * dir;
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        let h = half_extent[axis];
        if d[axis].abs() < 1e-300 {
            if o[axis] < -h || o[axis] > h {
                return None;
            }
            continue;
        }
        let inv_d = 1.0 / d[axis];
        let mut t0 = (-h - o[axis]) * inv_d;
        let mut t1 = (h - o[axis]) * inv_d;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > 0.0).then_some(t_near)
}

/// Point-to-segment projection: returns (closest point, parameter in [0,1]).
pub fn project_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> (Vec3, f64) {
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return (*a, 0.0);
    }
    // Planar projection; z is interpolated along the segment.
    let t = (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

pub fn planar_distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}
