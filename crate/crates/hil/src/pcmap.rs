//! Point-cloud map generation from the road network and static props.
//!
//! The ground is sampled on a regular grid covering the road bounds plus a
//! margin; every static prop contributes points on its box surfaces at the
//! same spacing. Output is `PCM1`, a u32 point count, then x, y, z, intensity
//! as little-endian f32 records.

use bytes::BufMut;
use hil_core::{ActorKind, RoadNetwork, Snapshot, Vec3};
use std::io::Write;
use thiserror::Error;

pub const PCMAP_MAGIC: [u8; 4] = *b"PCM1";
/// Ground margin around the road bounds, meters.
pub const MAP_MARGIN: f64 = 10.0;
const GROUND_INTENSITY: f32 = 0.2;
const PROP_INTENSITY: f32 = 0.8;

#[derive(Debug, Error)]
pub enum PcMapError {
    #[error("grid step must be positive, got {0}")]
    BadStep(f64),
    #[error("writing map: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub position: Vec3,
    pub intensity: f32,
}

/// Number of samples of `[0, len]` at `step`, both ends included.
fn samples(len: f64, step: f64) -> usize {
    (len / step + 1e-9).floor() as usize + 1
}

pub fn map_points(road: &RoadNetwork, snapshot: &Snapshot, step: f64) -> Result<Vec<MapPoint>, PcMapError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(PcMapError::BadStep(step));
    }
    let Some((lo, hi)) = road.bounds() else { return Ok(Vec::new()) };
    let (x0, y0) = (lo.x - MAP_MARGIN, lo.y - MAP_MARGIN);
    let (nx, ny) = (samples(hi.x - lo.x + 2.0 * MAP_MARGIN, step), samples(hi.y - lo.y + 2.0 * MAP_MARGIN, step));
    let mut points = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let position = Vec3::new(x0 + i as f64 * step, y0 + j as f64 * step, 0.0);
            points.push(MapPoint { position, intensity: GROUND_INTENSITY });
        }
    }
    for prop in snapshot.actors().iter().filter(|a| a.kind == ActorKind::StaticProp) {
        let pose = prop.box_pose();
        for local in box_surface(&prop.bbox_extent, step) {
            points.push(MapPoint { position: pose.transform_point(&local), intensity: PROP_INTENSITY });
        }
    }
    Ok(points)
}

/// Points on the four sides and the top of a box with half extents `e`.
fn box_surface(e: &Vec3, step: f64) -> Vec<Vec3> {
    let axis = |half: f64| {
        let n = samples(2.0 * half, step);
        let span = 2.0 * half;
        (0..n).map(move |k| -half + if n > 1 { span * k as f64 / (n - 1) as f64 } else { half })
    };
    let mut out = Vec::new();
    for x in axis(e.x) {
        for z in axis(e.z) {
            out.push(Vec3::new(x, -e.y, z));
            out.push(Vec3::new(x, e.y, z));
        }
        for y in axis(e.y) {
            out.push(Vec3::new(x, y, e.z));
        }
    }
    for y in axis(e.y) {
        for z in axis(e.z) {
            out.push(Vec3::new(-e.x, y, z));
            out.push(Vec3::new(e.x, y, z));
        }
    }
    out
}

pub fn encode_map(points: &[MapPoint]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + points.len() * 16);
    buf.put_slice(&PCMAP_MAGIC);
    buf.put_u32_le(points.len() as u32);
    for p in points {
        buf.put_f32_le(p.position.x as f32);
        buf.put_f32_le(p.position.y as f32);
        buf.put_f32_le(p.position.z as f32);
        buf.put_f32_le(p.intensity);
    }
    buf
}

/// Point count stored in an encoded map, if the header is well formed.
pub fn map_point_count(raw: &[u8]) -> Option<usize> {
    if raw.len() < 8 || raw[..4] != PCMAP_MAGIC {
        return None;
    }
    Some(u32::from_le_bytes(raw[4..8].try_into().ok()?) as usize)
}

/// Generates the map and writes it to `out`, returning the point count.
pub fn generate_pointcloud_map(
    road: &RoadNetwork,
    snapshot: &Snapshot,
    grid_step: f64,
    out: &mut impl Write,
) -> Result<usize, PcMapError> {
    let points = map_points(road, snapshot, grid_step)?;
    out.write_all(&encode_map(&points))?;
    Ok(points.len())
}
