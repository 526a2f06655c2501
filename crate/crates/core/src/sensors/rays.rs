//! LiDAR ray directions, either from a fov/resolution grid or from a scan
//! pattern file, and their split into pinhole capture sectors.

use super::config::LidarParams;
use super::SensorError;
use crate::Vec3;
use std::path::Path;

/// Widest horizontal fov covered by a single capture sector.
pub const SINGLE_SECTOR_MAX_FOV: f64 = 170.0;
/// Width limit of each sector once the fov is split.
pub const SECTOR_WIDTH: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    /// Unit direction in the sensor frame (x forward, y left, z up).
    pub dir: Vec3,
    /// Degrees, counter-clockwise from +x.
    pub azimuth: f64,
    /// Degrees above the xy plane.
    pub elevation: f64,
    pub row: u32,
    pub col: u32,
}

impl Ray {
    pub fn new(azimuth: f64, elevation: f64, row: u32, col: u32) -> Self {
        let (az, el) = (azimuth.to_radians(), elevation.to_radians());
        let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        Self { dir, azimuth, elevation, row, col }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaySet {
    rays: Vec<Ray>,
    pub columns: u32,
    pub channels: u32,
    /// Azimuth interval spanned by the rays, degrees.
    pub azimuth_span: (f64, f64),
}

/// One pinhole capture volume: the rays it owns, looking along
/// `center_azimuth`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sector {
    pub center_azimuth: f64,
    pub width: f64,
    pub rays: Vec<u32>,
}

impl RaySet {
    /// Number of grid columns for a horizontal fov and resolution. The tiny
    /// epsilon keeps exact quotients such as 150/0.1 from flooring down.
    pub fn grid_columns(horizontal_fov: f64, horizontal_resolution: f64) -> u32 {
        (horizontal_fov / horizontal_resolution + 1e-9).floor() as u32
    }

    /// Regular grid: columns at half-step offsets across the horizontal fov,
    /// channels evenly spaced from `upper_fov` down over the vertical fov.
    pub fn grid(params: &LidarParams) -> Self {
        let columns = Self::grid_columns(params.horizontal_fov, params.horizontal_resolution);
        let channels = params.vertical_channels;
        let start = -params.horizontal_fov / 2.0;
        let mut rays = Vec::with_capacity(columns as usize * channels as usize);
        for row in 0..channels {
            let elevation = if channels == 1 {
                params.upper_fov - params.vertical_fov / 2.0
            } else {
                params.upper_fov - row as f64 * params.vertical_fov / (channels - 1) as f64
            };
            for col in 0..columns {
                let azimuth = start + (col as f64 + 0.5) * params.horizontal_resolution;
                rays.push(Ray::new(azimuth, elevation, row, col));
            }
        }
        Self { rays, columns, channels, azimuth_span: (start, -start) }
    }

    /// Scan pattern CSV with `azimuth_deg,elevation_deg` rows; a header
    /// row is optional.
    pub fn from_pattern_csv(text: &str) -> Result<Self, SensorError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut rays = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| SensorError::BadScanPattern(e.to_string()))?;
            if record.len() != 2 {
                return Err(SensorError::BadScanPattern(format!(
                    "row {}: expected 2 fields, got {}",
                    line + 1,
                    record.len()
                )));
            }
            let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
            match parsed {
                (Ok(az), Ok(el)) if az.is_finite() && el.is_finite() && el.abs() < 90.0 => {
                    rays.push(Ray::new(az, el, rays.len() as u32, 0));
                }
                (Err(_), Err(_)) if line == 0 => continue,
                _ => {
                    return Err(SensorError::BadScanPattern(format!(
                        "row {}: `{}` is not an azimuth/elevation pair",
                        line + 1,
                        record.iter().collect::<Vec<_>>().join(",")
                    )))
                }
            }
        }
        if rays.is_empty() {
            return Err(SensorError::BadScanPattern("pattern has no rays".into()));
        }
        let lo = rays.iter().map(|r| r.azimuth).fold(f64::INFINITY, f64::min);
        let hi = rays.iter().map(|r| r.azimuth).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 360.0 {
            return Err(SensorError::BadScanPattern(format!("azimuths span {} degrees", hi - lo)));
        }
        let columns = rays.len() as u32;
        Ok(Self { rays, columns, channels: 1, azimuth_span: (lo, hi) })
    }

    pub fn load_pattern(path: &Path) -> Result<Self, SensorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SensorError::BadScanPattern(format!("{}: {e}", path.display())))?;
        Self::from_pattern_csv(&text)
    }

    pub fn for_lidar(params: &LidarParams) -> Result<Self, SensorError> {
        match &params.scan_pattern_path {
            Some(path) => Self::load_pattern(path),
            None => Ok(Self::grid(params)),
        }
    }

    pub fn rays(&self) -> &[Ray] {
        &self.rays
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Horizontal fov covered, degrees. Grids report their configured fov;
    /// patterns report their azimuth extent.
    pub fn horizontal_fov(&self) -> f64 {
        self.azimuth_span.1 - self.azimuth_span.0
    }

    /// Partitions the rays into capture sectors: one sector up to 170°,
    /// otherwise `ceil(fov / 120)` equal sectors.
    pub fn sectors(&self) -> Vec<Sector> {
        let (lo, hi) = self.azimuth_span;
        let fov = hi - lo;
        let count = if fov > SINGLE_SECTOR_MAX_FOV { (fov / SECTOR_WIDTH).ceil() as usize } else { 1 };
        let width = if fov > 0.0 { fov / count as f64 } else { 0.0 };
        let mut sectors: Vec<Sector> = (0..count)
            .map(|i| Sector { center_azimuth: lo + (i as f64 + 0.5) * width, width, rays: Vec::new() })
            .collect();
        for (i, ray) in self.rays.iter().enumerate() {
            let slot = if width > 0.0 { ((ray.azimuth - lo) / width).floor() as isize } else { 0 };
            let slot = slot.clamp(0, count as isize - 1) as usize;
            sectors[slot].rays.push(i as u32);
        }
        sectors
    }
}
