//! LiDAR sampling through per-sector depth images.
//!
//! Each capture sector is a pinhole camera whose pixels are exactly the
//! sector's rays. Primitives are rasterized into a depth buffer (nearest
//! depth along the sector's optical axis wins) and every filled pixel is
//! re-projected back into a point along its ray.

use super::config::LidarParams;
use super::rays::{RaySet, Sector};
use super::scene::Scene;
use super::SensorError;
use crate::codec::{get_f32, get_f64, get_magic, get_str, get_u32, need, put_str, DecodeError};
use crate::{Pose, Vec3};
use bytes::BufMut;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const POINT_CLOUD_MAGIC: [u8; 4] = *b"PCL1";
/// Bytes per point: x, y, z, intensity as little-endian f32.
pub const POINT_STEP: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub stamp: f64,
    pub frame_id: String,
    /// x, y, z in the sensor frame (meters) and intensity.
    pub points: Vec<[f32; 4]>,
}

impl PointCloud {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + self.frame_id.len() + self.points.len() * POINT_STEP);
        buf.put_slice(&POINT_CLOUD_MAGIC);
        buf.put_f64_le(self.stamp);
        put_str(&mut buf, &self.frame_id);
        buf.put_u32_le(self.points.len() as u32);
        buf.put_u32_le(POINT_STEP as u32);
        for p in &self.points {
            for v in p {
                buf.put_f32_le(*v);
            }
        }
        buf
    }

    pub fn decode(mut raw: &[u8]) -> Result<Self, DecodeError> {
        get_magic(&mut raw, POINT_CLOUD_MAGIC)?;
        let stamp = get_f64(&mut raw)?;
        let frame_id = get_str(&mut raw)?;
        let count = get_u32(&mut raw)? as usize;
        let step = get_u32(&mut raw)?;
        if step as usize != POINT_STEP {
            return Err(DecodeError::Invalid { field: "point step", value: step as u64 });
        }
        need(&raw, count * POINT_STEP)?;
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            points.push([get_f32(&mut raw)?, get_f32(&mut raw)?, get_f32(&mut raw)?, get_f32(&mut raw)?]);
        }
        Ok(Self { stamp, frame_id, points })
    }

    /// Point count read from an encoded payload without decoding points.
    pub fn peek_count(mut raw: &[u8]) -> Result<u32, DecodeError> {
        get_magic(&mut raw, POINT_CLOUD_MAGIC)?;
        get_f64(&mut raw)?;
        get_str(&mut raw)?;
        get_u32(&mut raw)
    }
}

#[derive(Debug, Clone, Copy)]
struct Pixel {
    ray: u32,
    /// Sensor-frame direction.
    dir: Vec3,
    /// Image-plane coordinates and optical-axis component in the sector
    /// frame.
    u: f64,
    v: f64,
    axial: f64,
}

#[derive(Debug, Clone)]
struct SectorImage {
    /// Rotation from the sensor frame into the sector frame, about z.
    cos: f64,
    sin: f64,
    pixels: Vec<Pixel>,
    depth: Vec<f64>,
}

impl SectorImage {
    fn new(sector: &Sector, rays: &RaySet) -> Self {
        let c = sector.center_azimuth.to_radians();
        let (sin, cos) = (-c).sin_cos();
        let pixels = sector
            .rays
            .iter()
            .map(|&i| {
                let dir = rays.rays()[i as usize].dir;
                let local = rotate(cos, sin, &dir);
                Pixel { ray: i, dir, u: local.y / local.x, v: local.z / local.x, axial: local.x }
            })
            .collect::<Vec<_>>();
        let depth = vec![f64::INFINITY; pixels.len()];
        Self { cos, sin, pixels, depth }
    }
}

#[inline]
fn rotate(cos: f64, sin: f64, v: &Vec3) -> Vec3 {
    Vec3::new(cos * v.x - sin * v.y, sin * v.x + cos * v.y, v.z)
}

pub struct LidarSampler {
    params: LidarParams,
    rays: RaySet,
    sectors: Vec<SectorImage>,
    rng: ChaCha8Rng,
}

impl LidarSampler {
    pub fn new(params: LidarParams, seed: u64) -> Result<Self, SensorError> {
        let rays = RaySet::for_lidar(&params)?;
        Ok(Self::with_rays(params, rays, seed))
    }

    pub fn with_rays(params: LidarParams, rays: RaySet, seed: u64) -> Self {
        let sectors = rays.sectors().iter().map(|s| SectorImage::new(s, &rays)).collect();
        Self { params, rays, sectors, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn rays(&self) -> &RaySet {
        &self.rays
    }

    pub fn sector_count(&self) -> usize {
        self.sectors.len()
    }

    /// Samples one sweep from `sensor` (the sensor pose in the world).
    pub fn scan(&mut self, sensor: &Pose, scene: &Scene, stamp: f64, frame_id: &str) -> PointCloud {
        let rotation = sensor.rotation();
        let up = rotation.matrix().row(2).transpose();
        let height = sensor.position.z;
        let boxes = scene.relative_to(sensor);
        let range = self.params.range;
        let std = self.params.std_dev;
        let noisy = std.iter().any(|&s| s > 0.0);
        let mut points = Vec::new();

        for sector in &mut self.sectors {
            sector.depth.fill(f64::INFINITY);

            if height > 0.0 {
                for (px, depth) in sector.pixels.iter().zip(sector.depth.iter_mut()) {
                    let dz = up.dot(&px.dir);
                    if dz < 0.0 {
                        *depth = (-height / dz) * px.axial;
                    }
                }
            }

            for b in &boxes {
                let projected: Vec<Vec3> = b.corners.iter().map(|c| rotate(sector.cos, sector.sin, c)).collect();
                if projected.iter().all(|c| c.x <= 0.0) {
                    continue;
                }
                let bounds = if projected.iter().all(|c| c.x > 1e-9) {
                    let mut r = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
                    for c in &projected {
                        let (u, v) = (c.y / c.x, c.z / c.x);
                        r = [r[0].min(u), r[1].max(u), r[2].min(v), r[3].max(v)];
                    }
                    Some(r)
                } else {
                    None
                };
                for (px, depth) in sector.pixels.iter().zip(sector.depth.iter_mut()) {
                    if let Some([u0, u1, v0, v1]) = bounds {
                        if px.u < u0 || px.u > u1 || px.v < v0 || px.v > v1 {
                            continue;
                        }
                    }
                    if let Some(t) = b.hit(&px.dir) {
                        let d = t * px.axial;
                        if d < *depth {
                            *depth = d;
                        }
                    }
                }
            }

            for (px, &depth) in sector.pixels.iter().zip(&sector.depth) {
                if !depth.is_finite() {
                    continue;
                }
                let t = depth / px.axial;
                if t > range {
                    continue;
                }
                let mut p = px.dir * t;
                if noisy {
                    for k in 0..3 {
                        if std[k] > 0.0 {
                            let n: f64 = StandardNormal.sample(&mut self.rng);
                            p[k] += n * std[k];
                        }
                    }
                }
                points.push([p.x as f32, p.y as f32, p.z as f32, (1.0 / (1.0 + t)) as f32]);
            }
        }
        PointCloud { stamp, frame_id: frame_id.to_string(), points }
    }

    /// Noise-free sweep returning f64 sensor-frame points with the index of
    /// the ray that produced each.
    pub fn scan_exact(&mut self, sensor: &Pose, scene: &Scene) -> Vec<(u32, Vec3)> {
        let saved = self.params.std_dev;
        self.params.std_dev = [0.0; 3];
        let mut out = Vec::new();
        let cloud = self.scan(sensor, scene, 0.0, "");
        self.params.std_dev = saved;
        // Re-derive the f64 points from the depth buffers left by the scan.
        for sector in &self.sectors {
            for (px, &depth) in sector.pixels.iter().zip(&sector.depth) {
                if depth.is_finite() && depth / px.axial <= self.params.range {
                    out.push((px.ray, px.dir * (depth / px.axial)));
                }
            }
        }
        debug_assert_eq!(out.len(), cloud.points.len());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::rays::Ray;

    fn params(range: f64, std: f64) -> LidarParams {
        LidarParams {
            horizontal_fov: 360.0,
            vertical_fov: 30.0,
            upper_fov: 15.0,
            horizontal_resolution: 1.0,
            vertical_channels: 16,
            range,
            std_dev: [std; 3],
            scan_pattern_path: None,
        }
    }

    #[test]
    fn ray_straight_down_hits_ground_at_sensor_height() {
        let rays = RaySet::from_pattern_csv("0,-89.99999\n").unwrap();
        let mut s = LidarSampler::with_rays(params(100.0, 0.0), rays, 1);
        let pose = Pose::planar(3.0, 4.0, 0.7);
        let pose = Pose { position: Vec3::new(3.0, 4.0, 2.0), ..pose };
        let pts = s.scan_exact(&pose, &Scene::default());
        assert_eq!(pts.len(), 1);
        assert!((pts[0].1.norm() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn range_culls_far_ground() {
        let mut s = LidarSampler::new(params(10.0, 0.0), 1).unwrap();
        let pose = Pose { position: Vec3::new(0.0, 0.0, 2.0), ..Pose::identity() };
        let cloud = s.scan(&pose, &Scene::default(), 0.0, "lidar");
        assert!(!cloud.points.is_empty());
        for p in &cloud.points {
            let r = ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) as f64).sqrt();
            assert!(r <= 10.0 + 1e-4);
        }
    }

    #[test]
    fn noise_stays_within_six_sigma_of_range() {
        let std = 0.01;
        let mut s = LidarSampler::new(params(20.0, std), 3).unwrap();
        let pose = Pose { position: Vec3::new(0.0, 0.0, 2.0), ..Pose::identity() };
        let cloud = s.scan(&pose, &Scene::default(), 0.0, "lidar");
        let bound = 20.0 + 6.0 * std * 3f64.sqrt();
        assert!(cloud.points.iter().all(|p| ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) as f64).sqrt() <= bound));
    }

    #[test]
    fn intensity_falls_with_range() {
        let rays = RaySet::from_pattern_csv("0,-45\n").unwrap();
        let mut s = LidarSampler::with_rays(params(100.0, 0.0), rays, 1);
        let pose = Pose { position: Vec3::new(0.0, 0.0, 1.0), ..Pose::identity() };
        let cloud = s.scan(&pose, &Scene::default(), 0.0, "l");
        let expected = 1.0 / (1.0 + 2f64.sqrt());
        assert!((cloud.points[0][3] as f64 - expected).abs() < 1e-6);
        assert_eq!(Ray::new(0.0, -45.0, 0, 0).dir.z, -(45f64.to_radians().sin()));
    }

    #[test]
    fn cloud_round_trips() {
        let cloud = PointCloud { stamp: 1.5, frame_id: "lidar".into(), points: vec![[1.0, 2.0, 3.0, 0.5]; 3] };
        let raw = cloud.encode();
        assert_eq!(PointCloud::decode(&raw).unwrap(), cloud);
        assert_eq!(PointCloud::peek_count(&raw).unwrap(), 3);
        assert!(PointCloud::decode(&raw[..raw.len() - 1]).is_err());
    }
}
