//! Stereo depth refinement against projected LiDAR depth, and model assembly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspond::PointCloud;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::io::FormatError;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("depth maps differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("cloud lacks normals or curvatures")]
    MissingNormals,
    #[error("{0} depth maps for {1} poses")]
    CountMismatch(usize, usize),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Per-pixel z-depth in meters; NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::NAN; (width as usize) * (height as usize)],
        }
    }

    fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        let d = self.depth[self.index(u, v)];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    pub fn set(&mut self, u: u32, v: u32, depth: f64) {
        let i = self.index(u, v);
        self.depth[i] = depth;
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        let d = self.depth[idx];
        d.is_finite() && d > 0.0
    }

    pub fn valid_count(&self) -> usize {
        (0..self.depth.len()).filter(|&i| self.is_valid(i)).count()
    }

    fn check_size(&self, other: &DepthMap) -> Result<(), MappingError> {
        if self.width != other.width || self.height != other.height {
            return Err(MappingError::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Pixel offsets within `radius`, nearest first.
    fn disk(radius: f64) -> Vec<(i64, i64)> {
        let r = radius.max(0.0).floor() as i64;
        let mut out: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dv| (-r..=r).map(move |du| (du, dv)))
            .filter(|(du, dv)| ((du * du + dv * dv) as f64) <= radius * radius)
            .collect();
        out.sort_by_key(|(du, dv)| (du * du + dv * dv, *dv, *du));
        out
    }

    fn neighbors(&self, idx: usize, disk: &[(i64, i64)]) -> impl Iterator<Item = usize> + '_ {
        let (w, h) = (self.width as i64, self.height as i64);
        let (u, v) = ((idx as i64) % w, (idx as i64) / w);
        disk.to_vec().into_iter().filter_map(move |(du, dv)| {
            let (x, y) = (u + du, v + dv);
            (x >= 0 && y >= 0 && x < w && y < h).then(|| (y * w + x) as usize)
        })
    }
}

/// LiDAR depth image that remembers which cloud point won each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedLidar {
    pub map: DepthMap,
    pub source: Vec<Option<usize>>,
}

/// Projects a cloud into the image with a z-buffer (nearest point wins).
/// `cloud_to_camera` is `T_e` for a cloud in its station's LiDAR frame.
pub fn project_lidar_points(
    cloud: &PointCloud,
    cloud_to_camera: &Pose,
    k: &CameraIntrinsics,
    width: u32,
    height: u32,
) -> ProjectedLidar {
    let mut map = DepthMap::new(width, height);
    let mut source = vec![None; map.depth.len()];
    for (i, p) in cloud.points.iter().enumerate() {
        let pc = cloud_to_camera.transform_point(p);
        let Ok(px) = k.project(&pc) else { continue };
        let (u, v) = (px.x.round(), px.y.round());
        if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
            continue;
        }
        let idx = map.index(u as u32, v as u32);
        if !map.is_valid(idx) || pc.z < map.depth[idx] {
            map.depth[idx] = pc.z;
            source[idx] = Some(i);
        }
    }
    ProjectedLidar { map, source }
}

pub fn project_lidar_depth(
    cloud: &PointCloud,
    cloud_to_camera: &Pose,
    k: &CameraIntrinsics,
    width: u32,
    height: u32,
) -> DepthMap {
    project_lidar_points(cloud, cloud_to_camera, k, width, height).map
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Largest accepted stereo/LiDAR depth difference, meters.
    pub max_diff: f64,
    /// LiDAR support neighborhood, pixels.
    pub radius: f64,
    pub max_curvature: f64,
    /// Radians.
    pub max_view_angle: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_diff: 0.05,
            radius: 3.0,
            max_curvature: 0.01,
            max_view_angle: 70f64.to_radians(),
        }
    }
}

/// Fold one: invalidates stereo pixels that disagree with every LiDAR depth
/// within `radius` pixels by more than `max_diff`. Pixels without LiDAR
/// support are kept.
pub fn remove_outliers(stereo: &DepthMap, lidar: &DepthMap, max_diff: f64, radius: f64) -> Result<DepthMap, MappingError> {
    stereo.check_size(lidar)?;
    let disk = DepthMap::disk(radius);
    let mut out = stereo.clone();
    for idx in 0..stereo.depth.len() {
        if !stereo.is_valid(idx) {
            continue;
        }
        let s = stereo.depth[idx];
        let closest = lidar
            .neighbors(idx, &disk)
            .filter(|&j| lidar.is_valid(j))
            .map(|j| (lidar.depth[j] - s).abs())
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
        if closest.is_some_and(|d| d > max_diff) {
            out.depth[idx] = f64::NAN;
        }
    }
    Ok(out)
}

/// Fold two: fills invalid stereo pixels from the LiDAR surface when every
/// LiDAR point projected within `radius` is locally flat and seen at most
/// `max_view_angle` off its normal, and all of them lie within `max_diff` of
/// the tangent plane of the nearest one. The depth comes from intersecting
/// the pixel ray with that plane.
pub fn fill_holes(
    stereo: &DepthMap,
    cloud: &PointCloud,
    cloud_to_camera: &Pose,
    k: &CameraIntrinsics,
    cfg: &RefineConfig,
) -> Result<DepthMap, MappingError> {
    let (Some(_), Some(curv)) = (&cloud.normals, &cloud.curvatures) else {
        return Err(MappingError::MissingNormals);
    };
    let proj = project_lidar_points(cloud, cloud_to_camera, k, stereo.width, stereo.height);
    let disk = DepthMap::disk(cfg.radius);
    let rot = cloud_to_camera.rotation_matrix();
    let usable = |i: usize| -> Option<(Vector3<f64>, Vector3<f64>)> {
        let n = cloud.normal(i)?;
        if !(curv[i] <= cfg.max_curvature) {
            return None;
        }
        let p = cloud_to_camera.transform_point(&cloud.points[i]);
        let n = rot * n;
        let cos = n.dot(&p).abs() / p.norm();
        (cos.clamp(0.0, 1.0).acos() <= cfg.max_view_angle).then_some((p, n))
    };
    let mut out = stereo.clone();
    for idx in 0..stereo.depth.len() {
        if stereo.is_valid(idx) {
            continue;
        }
        let support: Vec<usize> = stereo.neighbors(idx, &disk).filter_map(|j| proj.source[j]).collect();
        if support.is_empty() {
            continue;
        }
        let planes: Option<Vec<_>> = support.iter().map(|&i| usable(i)).collect();
        let Some(planes) = planes else { continue };
        let (p, n) = planes[0];
        if planes.iter().any(|(q, _)| n.dot(&(q - p)).abs() > cfg.max_diff) {
            continue;
        }
        let (u, v) = (idx as u32 % stereo.width, idx as u32 / stereo.width);
        let ray = k.ray(&Vector2::new(u as f64, v as f64));
        let denom = n.dot(&ray);
        if denom.abs() < 1e-12 {
            continue;
        }
        let z = n.dot(&p) / denom;
        if z > 0.0 && z.is_finite() {
            out.depth[idx] = z;
        }
    }
    Ok(out)
}

/// Back-projects every valid pixel into the world frame and concatenates.
/// With `voxel`, points are replaced by per-voxel centroids.
pub fn assemble_model(
    maps: &[DepthMap],
    poses: &[Pose],
    k: &CameraIntrinsics,
    voxel: Option<f64>,
) -> Result<PointCloud, MappingError> {
    if maps.len() != poses.len() {
        return Err(MappingError::CountMismatch(maps.len(), poses.len()));
    }
    let mut pts = Vec::new();
    for (m, pose) in maps.iter().zip(poses) {
        for idx in 0..m.depth.len() {
            if !m.is_valid(idx) {
                continue;
            }
            let (u, v) = (idx as u32 % m.width, idx as u32 / m.width);
            let pc = k.ray(&Vector2::new(u as f64, v as f64)) * m.depth[idx];
            pts.push(pose.transform_point(&pc));
        }
    }
    if let Some(leaf) = voxel.filter(|l| *l > 0.0) {
        let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
        for p in &pts {
            let key = (
                (p.x / leaf).floor() as i64,
                (p.y / leaf).floor() as i64,
                (p.z / leaf).floor() as i64,
            );
            let e = cells.entry(key).or_insert((Vector3::zeros(), 0));
            e.0 += p;
            e.1 += 1;
        }
        pts = cells.into_values().map(|(s, c)| s / c as f64).collect();
    }
    Ok(PointCloud::new(pts))
}

const MAGIC: &[u8; 4] = b"DMAP";

/// Little-endian `"DMAP"`, `u32` width, `u32` height, then row-major `f32`
/// depths with NaN for invalid pixels.
pub fn write_depth_map(path: impl AsRef<Path>, map: &DepthMap) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(12 + 4 * map.depth.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&map.width.to_le_bytes());
    buf.extend_from_slice(&map.height.to_le_bytes());
    for d in &map.depth {
        let v = if d.is_finite() && *d > 0.0 { *d as f32 } else { f32::NAN };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    f.write_all(&buf).map_err(|e| FormatError::io(path, e))
}

pub fn read_depth_map(path: impl AsRef<Path>) -> Result<DepthMap, FormatError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| FormatError::io(path, e))?;
    parse_depth_map(&buf)
}

pub fn parse_depth_map(buf: &[u8]) -> Result<DepthMap, FormatError> {
    let bad = |m: &str| FormatError::DepthMap(m.to_string());
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(bad("missing DMAP header"));
    }
    let width = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    let n = width as usize * height as usize;
    if buf.len() != 12 + 4 * n {
        return Err(bad("payload size does not match dimensions"));
    }
    let depth = buf[12..]
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            if v.is_finite() && v > 0.0 {
                v
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(DepthMap { width, height, depth })
}
