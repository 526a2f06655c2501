//! Synthetic pinhole camera: actors are painted in a color derived from
//! their id, the ground is a 1 m checkerboard and everything else is sky.

use super::config::CameraParams;
use super::scene::Scene;
use crate::codec::{get_f64, get_magic, get_str, get_u32, need, put_str, DecodeError};
use crate::world::ActorId;
use crate::{Pose, Vec3};
use bytes::BufMut;

pub const IMAGE_MAGIC: [u8; 4] = *b"IMG1";
pub const CAMERA_INFO_MAGIC: [u8; 4] = *b"CAM1";

pub const SKY: [u8; 3] = [135, 190, 235];
pub const GROUND_LIGHT: [u8; 3] = [110, 110, 110];
pub const GROUND_DARK: [u8; 3] = [80, 80, 80];

/// Distinct, non-gray color for an actor id.
pub fn actor_color(id: ActorId) -> [u8; 3] {
    let mut h = id.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    // Force one channel high and one low so the color never matches the
    // sky or ground palette.
    let mut c = [(h & 0xff) as u8, ((h >> 8) & 0xff) as u8, ((h >> 16) & 0xff) as u8];
    let hi = (h >> 24) as usize % 3;
    let lo = (hi + 1 + (h >> 32) as usize % 2) % 3;
    c[hi] = 200 | c[hi];
    c[lo] &= 0x3f;
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub stamp: f64,
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8.
    pub data: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(40 + self.frame_id.len() + self.data.len());
        buf.put_slice(&IMAGE_MAGIC);
        buf.put_f64_le(self.stamp);
        put_str(&mut buf, &self.frame_id);
        buf.put_u32_le(self.width);
        buf.put_u32_le(self.height);
        put_str(&mut buf, "rgb8");
        buf.put_u32_le(self.data.len() as u32);
        buf.put_slice(&self.data);
        buf
    }

    pub fn decode(mut raw: &[u8]) -> Result<Self, DecodeError> {
        let (stamp, frame_id, width, height) = Self::read_header(&mut raw)?;
        let len = get_u32(&mut raw)? as usize;
        if len != width as usize * height as usize * 3 {
            return Err(DecodeError::Invalid { field: "image payload length", value: len as u64 });
        }
        need(&raw, len)?;
        Ok(Self { stamp, frame_id, width, height, data: raw[..len].to_vec() })
    }

    /// Width and height read from an encoded payload.
    pub fn peek_size(mut raw: &[u8]) -> Result<(u32, u32), DecodeError> {
        let (_, _, w, h) = Self::read_header(&mut raw)?;
        Ok((w, h))
    }

    fn read_header(raw: &mut &[u8]) -> Result<(f64, String, u32, u32), DecodeError> {
        get_magic(raw, IMAGE_MAGIC)?;
        let stamp = get_f64(raw)?;
        let frame_id = get_str(raw)?;
        let width = get_u32(raw)?;
        let height = get_u32(raw)?;
        let encoding = get_str(raw)?;
        if encoding != "rgb8" {
            return Err(DecodeError::Invalid { field: "encoding", value: encoding.len() as u64 });
        }
        Ok((stamp, frame_id, width, height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraInfo {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraInfo {
    pub fn from_params(p: &CameraParams) -> Self {
        let f = (p.image_size_x as f64 / 2.0) / (p.fov.to_radians() / 2.0).tan();
        Self {
            width: p.image_size_x,
            height: p.image_size_y,
            fx: f,
            fy: f,
            cx: p.image_size_x as f64 / 2.0,
            cy: p.image_size_y as f64 / 2.0,
        }
    }

    pub fn encode(&self, stamp: f64, frame_id: &str) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + frame_id.len());
        buf.put_slice(&CAMERA_INFO_MAGIC);
        buf.put_f64_le(stamp);
        put_str(&mut buf, frame_id);
        buf.put_u32_le(self.width);
        buf.put_u32_le(self.height);
        for v in [self.fx, self.fy, self.cx, self.cy] {
            buf.put_f64_le(v);
        }
        buf
    }

    pub fn decode(mut raw: &[u8]) -> Result<(f64, String, Self), DecodeError> {
        get_magic(&mut raw, CAMERA_INFO_MAGIC)?;
        let stamp = get_f64(&mut raw)?;
        let frame = get_str(&mut raw)?;
        let width = get_u32(&mut raw)?;
        let height = get_u32(&mut raw)?;
        let info = Self {
            width,
            height,
            fx: get_f64(&mut raw)?,
            fy: get_f64(&mut raw)?,
            cx: get_f64(&mut raw)?,
            cy: get_f64(&mut raw)?,
        };
        Ok((stamp, frame, info))
    }

    /// Camera-frame direction (x forward, y left, z up) through the center
    /// of pixel `(px, py)`; not normalized, x component is 1.
    pub fn pixel_ray(&self, px: u32, py: u32) -> Vec3 {
        Vec3::new(1.0, -((px as f64 + 0.5) - self.cx) / self.fx, -((py as f64 + 0.5) - self.cy) / self.fy)
    }
}

pub struct CameraSampler {
    info: CameraInfo,
    rays: Vec<Vec3>,
    depth: Vec<f64>,
}

impl CameraSampler {
    pub fn new(params: &CameraParams) -> Self {
        let info = CameraInfo::from_params(params);
        let mut rays = Vec::with_capacity((info.width * info.height) as usize);
        for y in 0..info.height {
            for x in 0..info.width {
                rays.push(info.pixel_ray(x, y));
            }
        }
        let depth = vec![f64::INFINITY; rays.len()];
        Self { info, rays, depth }
    }

    pub fn info(&self) -> &CameraInfo {
        &self.info
    }

    pub fn render(&mut self, camera: &Pose, scene: &Scene, stamp: f64, frame_id: &str) -> Image {
        let (w, h) = (self.info.width as usize, self.info.height as usize);
        let mut data = vec![0u8; w * h * 3];
        self.depth.fill(f64::INFINITY);
        let rotation = *camera.rotation().matrix();
        let up = rotation.row(2).transpose();
        let height = camera.position.z;

        for (i, d) in self.rays.iter().enumerate() {
            let dz = up.dot(d);
            let px = &mut data[3 * i..3 * i + 3];
            if height > 0.0 && dz < 0.0 {
                let t = -height / dz;
                self.depth[i] = t;
                let hit = camera.position + rotation * d * t;
                let parity = (hit.x.floor() as i64 + hit.y.floor() as i64).rem_euclid(2);
                px.copy_from_slice(if parity == 0 { &GROUND_LIGHT } else { &GROUND_DARK });
            } else {
                px.copy_from_slice(&SKY);
            }
        }

        for b in scene.relative_to(camera) {
            // Every pixel ray points forward (x > 0), so a box fully behind
            // the image plane cannot be hit.
            if b.corners.iter().all(|c| c.x <= 0.0) {
                continue;
            }
            let (x0, x1, y0, y1) = if b.corners.iter().all(|c| c.x > 1e-9) {
                let mut r = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
                for c in &b.corners {
                    let u = self.info.cx - self.info.fx * c.y / c.x;
                    let v = self.info.cy - self.info.fy * c.z / c.x;
                    r = [r[0].min(u), r[1].max(u), r[2].min(v), r[3].max(v)];
                }
                if r[1] < 0.0 || r[3] < 0.0 || r[0] > w as f64 || r[2] > h as f64 {
                    continue;
                }
                (
                    r[0].floor().max(0.0) as usize,
                    (r[1].ceil() as usize).min(w),
                    r[2].floor().max(0.0) as usize,
                    (r[3].ceil() as usize).min(h),
                )
            } else {
                (0, w, 0, h)
            };
            let color = actor_color(b.id);
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * w + x;
                    if let Some(t) = b.hit(&self.rays[i]) {
                        if t < self.depth[i] {
                            self.depth[i] = t;
                            data[3 * i..3 * i + 3].copy_from_slice(&color);
                        }
                    }
                }
            }
        }
        Image { stamp, frame_id: frame_id.to_string(), width: self.info.width, height: self.info.height, data }
    }
}
