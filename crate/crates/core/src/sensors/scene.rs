//! Geometry seen by the sensors: the ground plane `z = 0` plus one oriented
//! box per actor.

use crate::world::{ActorId, Snapshot};
use crate::{Pose, Vec3};
use nalgebra::Matrix3;

#[derive(Debug, Clone)]
pub struct SceneBox {
    pub id: ActorId,
    pub center: Vec3,
    /// World-to-box rotation.
    pub to_box: Matrix3<f64>,
    pub half_extent: Vec3,
}

impl SceneBox {
    pub fn corners(&self) -> [Vec3; 8] {
        let to_world = self.to_box.transpose();
        let h = self.half_extent;
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vec3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            );
            *c = self.center + to_world * s;
        }
        out
    }
}

/// Slab test in box coordinates. `o` and `d` are already expressed in the
/// box frame. Returns the entry distance; rays starting inside miss.
#[inline]
pub(crate) fn slab(o: &Vec3, d: &Vec3, h: &Vec3) -> Option<f64> {
    let mut near = f64::NEG_INFINITY;
    let mut far = f64::INFINITY;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < -h[k] || o[k] > h[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[k];
        let a = (-h[k] - o[k]) * inv;
        let b = (h[k] - o[k]) * inv;
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        near = near.max(a);
        far = far.min(b);
        if near > far {
            return None;
        }
    }
    (near > 0.0).then_some(near)
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub boxes: Vec<SceneBox>,
}

impl Scene {
    /// Every actor except `exclude` (normally the ego carrying the sensor).
    pub fn from_snapshot(snapshot: &Snapshot, exclude: Option<ActorId>) -> Self {
        let boxes = snapshot
            .actors()
            .iter()
            .filter(|a| Some(a.id) != exclude)
            .map(|a| {
                let pose = a.box_pose();
                SceneBox {
                    id: a.id,
                    center: pose.position,
                    to_box: *pose.rotation().inverse().matrix(),
                    half_extent: a.bbox_extent,
                }
            })
            .collect();
        Self { boxes }
    }

    /// Boxes expressed relative to a sensor pose: each entry holds the
    /// sensor-to-box rotation and the sensor origin in box coordinates.
    pub(crate) fn relative_to(&self, sensor: &Pose) -> Vec<LocalBox> {
        let sensor_to_world = *sensor.rotation().matrix();
        self.boxes
            .iter()
            .map(|b| LocalBox {
                id: b.id,
                to_box: b.to_box * sensor_to_world,
                origin: b.to_box * (sensor.position - b.center),
                half_extent: b.half_extent,
                corners: b.corners().map(|c| sensor_to_world.transpose() * (c - sensor.position)),
            })
            .collect()
    }
}

/// A scene box seen from the sensor frame.
#[derive(Debug, Clone)]
pub(crate) struct LocalBox {
    pub id: ActorId,
    pub to_box: Matrix3<f64>,
    pub origin: Vec3,
    pub half_extent: Vec3,
    /// Box corners in the sensor frame.
    pub corners: [Vec3; 8],
}

impl LocalBox {
    #[inline]
    pub fn hit(&self, dir_sensor: &Vec3) -> Option<f64> {
        slab(&self.origin, &(self.to_box * dir_sensor), &self.half_extent)
    }
}
