//! Synthetic scenes with exact ground truth: station poses, extrinsic,
//! landmarks, features, LiDAR clouds and rough cloud registrations.

mod surface;

pub use surface::{exploded_cube, raycast, visible, Hit, Surface};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspond::PointCloud;
use crate::geometry::{relative_cloud_transform, CameraIntrinsics, DepthKind, Landmark, Pose};
use crate::graph::{Feature, LidarObservation};
use crate::io::CloudTransform;
use crate::mapping::DepthMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PoseGenerator {
    /// Cameras on an arc around `center`, all looking at it. Station `k`
    /// sits at height offset `height + height_amplitude · sin(2πk / N)`.
    Orbit {
        center: Vector3<f64>,
        radius: f64,
        /// Total arc, radians.
        arc: f64,
        height: f64,
        height_amplitude: f64,
    },
    /// Cameras along a line, all with the same orientation.
    Line {
        start: Vector3<f64>,
        step: Vector3<f64>,
        /// Camera-to-world rotation shared by all stations (axis-angle).
        rotation: Vector3<f64>,
    },
    Custom { poses: Vec<Pose> },
}

/// Camera-to-world pose at `eye` looking at `target`, image y pointing down
/// (world +y).
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let down = Vector3::y();
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    Pose::from_rotation_matrix(&Matrix3::from_columns(&[x, y, z]), *eye)
}

impl PoseGenerator {
    pub fn poses(&self, n: usize) -> Result<Vec<Pose>, SynthError> {
        match self {
            PoseGenerator::Orbit {
                center,
                radius,
                arc,
                height,
                height_amplitude,
            } => Ok((0..n)
                .map(|k| {
                    let phi = if n > 1 {
                        -0.5 * arc + arc * k as f64 / (n - 1) as f64
                    } else {
                        0.0
                    };
                    let h = height + height_amplitude * (std::f64::consts::TAU * k as f64 / n as f64).sin();
                    let eye = center + Vector3::new(radius * phi.sin(), h, -radius * phi.cos());
                    look_at(&eye, center)
                })
                .collect()),
            PoseGenerator::Line { start, step, rotation } => Ok((0..n)
                .map(|k| Pose::from_axis_angle(*rotation, start + step * k as f64))
                .collect()),
            PoseGenerator::Custom { poses } => {
                if poses.len() != n {
                    return Err(SynthError::InvalidSpec(format!(
                        "{} custom poses for {n} stations",
                        poses.len()
                    )));
                }
                Ok(poses.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Feature pixel σ.
    pub pixel: f64,
    /// Stereo depth σ is `depth_multiplier · d² / (b f)`.
    pub depth_multiplier: f64,
    /// LiDAR range σ along the ray, meters.
    pub range: f64,
    /// Per-component descriptor σ.
    pub descriptor: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel: 0.0,
            depth_multiplier: 0.0,
            range: 0.0,
            descriptor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierSpec {
    /// Fraction of features corrupted, half in pixel and half in depth.
    pub feature_fraction: f64,
    pub pixel_offset: f64,
    pub depth_offset: f64,
    /// Fraction of cloud points displaced along their ray.
    pub lidar_fraction: f64,
    pub lidar_offset: f64,
}

impl Default for OutlierSpec {
    fn default() -> Self {
        Self {
            feature_fraction: 0.0,
            pixel_offset: 30.0,
            depth_offset: 0.1,
            lidar_fraction: 0.0,
            lidar_offset: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub stations: usize,
    pub poses: PoseGenerator,
    /// LiDAR-to-camera ground truth.
    pub extrinsic: Pose,
    pub intrinsics: CameraIntrinsics,
    pub width: u32,
    pub height: u32,
    pub landmarks: usize,
    pub surfaces: Vec<Surface>,
    /// Surface samples drawn per station before the visibility test.
    pub lidar_samples: usize,
    pub max_range: f64,
    pub max_feature_depth: f64,
    /// Probability that a visible landmark yields a feature.
    pub keep_probability: f64,
    pub descriptor_dim: usize,
    pub noise: NoiseSpec,
    pub outliers: OutlierSpec,
    /// Bounds of the rough registration error, meters and radians.
    pub rough_translation: f64,
    pub rough_rotation: f64,
    pub depth_kind: DepthKind,
    pub seed: u64,
}

impl Default for SceneSpec {
    /// Five stations on a 120° arc around an exploded cube, at varying heights.
    fn default() -> Self {
        Self {
            stations: 5,
            poses: PoseGenerator::Orbit {
                center: Vector3::zeros(),
                radius: 2.5,
                arc: 120f64.to_radians(),
                height: -0.8,
                height_amplitude: 1.5,
            },
            extrinsic: default_extrinsic(),
            intrinsics: CameraIntrinsics {
                fx: 3000.0,
                fy: 3000.0,
                cx: 1950.0,
                cy: 1200.0,
                baseline: 0.38,
            },
            width: 3900,
            height: 2400,
            landmarks: 300,
            surfaces: exploded_cube(Vector3::zeros(), 0.6, 0.45),
            lidar_samples: 12000,
            max_range: 20.0,
            max_feature_depth: 10.0,
            keep_probability: 1.0,
            descriptor_dim: 32,
            noise: NoiseSpec::default(),
            outliers: OutlierSpec::default(),
            rough_translation: 0.02,
            rough_rotation: 0.5f64.to_radians(),
            depth_kind: DepthKind::Range,
            seed: 0,
        }
    }
}

/// A LiDAR mounted above the camera with x forward, y left and z up.
pub fn default_extrinsic() -> Pose {
    // columns: LiDAR axes expressed in the camera frame
    let base = Matrix3::from_columns(&[Vector3::z(), -Vector3::x(), -Vector3::y()]);
    let tilt = Pose::from_axis_angle(Vector3::new(0.02, -0.03, 0.015), Vector3::zeros()).rotation_matrix();
    Pose::from_rotation_matrix(&(tilt * base), Vector3::new(0.05, -0.12, 0.03))
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.stations == 0 {
            return bad("stations: at least one station is required");
        }
        let n = &self.noise;
        if [n.pixel, n.depth_multiplier, n.range, n.descriptor].iter().any(|s| !(*s >= 0.0)) {
            return bad("noise: sigmas must be non-negative");
        }
        let o = &self.outliers;
        if ![o.feature_fraction, o.lidar_fraction].iter().all(|f| (0.0..1.0).contains(f)) {
            return bad("outliers: fractions must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.keep_probability) {
            return bad("keep_probability: must lie in [0, 1]");
        }
        if self.surfaces.is_empty() {
            return bad("surfaces: none given");
        }
        if self.descriptor_dim == 0 {
            return bad("descriptor_dim: must be positive");
        }
        self.intrinsics
            .validate()
            .map_err(|e| SynthError::InvalidSpec(format!("intrinsics: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Camera-to-world, `poses[0] = I`.
    pub poses: Vec<Pose>,
    pub extrinsic: Pose,
    pub landmarks: Vec<Landmark>,
    /// True landmark of every feature.
    pub feature_landmarks: Vec<Vec<usize>>,
    pub feature_outliers: Vec<Vec<bool>>,
    /// Surface index of every cloud point.
    pub point_surfaces: Vec<Vec<usize>>,
    pub point_outliers: Vec<Vec<bool>>,
    /// Scene surfaces in the world frame.
    pub surfaces: Vec<Surface>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub intrinsics: CameraIntrinsics,
    pub width: u32,
    pub height: u32,
    pub features: Vec<Vec<Feature>>,
    /// One cloud per station in its LiDAR frame, with analytic normals.
    pub clouds: Vec<PointCloud>,
    /// Perturbed LiDAR registrations for every station pair `i < j`.
    pub rough: Vec<CloudTransform>,
    pub truth: GroundTruth,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    } else {
        let _: f64 = StandardNormal.sample(rng);
        0.0
    }
}

fn sample_surfaces<R: Rng + ?Sized>(surfaces: &[Surface], rng: &mut R) -> (Vector3<f64>, Vector3<f64>, usize) {
    let total: f64 = surfaces.iter().map(Surface::area).sum();
    let mut x = rng.random_range(0.0..total);
    for (i, s) in surfaces.iter().enumerate() {
        if x < s.area() || i + 1 == surfaces.len() {
            let (p, n) = s.sample(rng);
            return (p, n, i);
        }
        x -= s.area();
    }
    unreachable!()
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Gaussian translation offset per axis plus a rotation about a uniformly
/// random axis by a Gaussian angle.
pub fn perturb_pose(pose: &Pose, trans_sigma: f64, rot_sigma: f64, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = Vector3::new(
        gaussian(&mut rng, trans_sigma),
        gaussian(&mut rng, trans_sigma),
        gaussian(&mut rng, trans_sigma),
    );
    let axis = Vector3::from(UnitSphere.sample(&mut rng));
    let angle = gaussian(&mut rng, rot_sigma);
    offset(pose, &dt, &(axis * angle))
}

/// Moves a pose by exactly `distance` meters and `angle` radians in random
/// directions.
pub fn displace_pose(pose: &Pose, distance: f64, angle: f64, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = Vector3::from(UnitSphere.sample(&mut rng)) * distance;
    let axis = Vector3::from(UnitSphere.sample(&mut rng));
    offset(pose, &dt, &(axis * angle))
}

/// Perturbation bounded by `max_translation` and `max_angle`.
fn bounded_perturbation<R: Rng + ?Sized>(pose: &Pose, max_translation: f64, max_angle: f64, rng: &mut R) -> Pose {
    let dt = Vector3::from(UnitSphere.sample(rng)) * rng.random_range(0.0..=max_translation.max(0.0));
    let axis = Vector3::from(UnitSphere.sample(rng));
    offset(pose, &dt, &(axis * rng.random_range(0.0..=max_angle.max(0.0))))
}

fn offset(pose: &Pose, dt: &Vector3<f64>, dr: &Vector3<f64>) -> Pose {
    let mut d = nalgebra::Vector6::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(dt);
    d.fixed_rows_mut::<3>(3).copy_from(dr);
    pose.retract(&d)
}

/// Builds a scene. The world frame is re-based on station 0.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene, SynthError> {
    spec.validate()?;
    let n = spec.stations;
    let raw = spec.poses.poses(n)?;
    let rebase = raw[0].inverse();
    let mut poses: Vec<Pose> = raw.iter().map(|p| rebase.compose(p)).collect();
    poses[0] = Pose::identity();
    let surfaces: Vec<Surface> = spec.surfaces.iter().map(|s| s.transformed(&rebase)).collect();
    let k = &spec.intrinsics;
    let te = spec.extrinsic;

    // landmarks and their descriptors
    let mut rng = stream(spec.seed, 1);
    let mut landmarks = Vec::with_capacity(spec.landmarks);
    let mut descriptors = Vec::with_capacity(spec.landmarks);
    for id in 0..spec.landmarks {
        let (p, _, _) = sample_surfaces(&surfaces, &mut rng);
        landmarks.push(Landmark { id, position: p });
        descriptors.push(random_unit(&mut rng, spec.descriptor_dim));
    }

    // features
    let mut rng = stream(spec.seed, 2);
    let mut features = Vec::with_capacity(n);
    let mut feature_landmarks = Vec::with_capacity(n);
    let mut feature_outliers = Vec::with_capacity(n);
    let (w, h) = (spec.width as f64, spec.height as f64);
    for pose in &poses {
        let (mut fs, mut fl, mut fo) = (Vec::new(), Vec::new(), Vec::new());
        for l in &landmarks {
            let pc = pose.inverse_transform_point(&l.position);
            let Ok(pix) = k.project(&pc) else { continue };
            let in_image = pix.x >= 0.0 && pix.y >= 0.0 && pix.x < w && pix.y < h;
            if !in_image || pc.norm() > spec.max_feature_depth || !visible(&surfaces, pose.translation(), &l.position) {
                continue;
            }
            if rng.random::<f64>() >= spec.keep_probability {
                continue;
            }
            let depth = spec.depth_kind.measure(&pc);
            let sd = spec.noise.depth_multiplier * k.depth_sigma(depth, 1.0);
            let mut pixel = pix + Vector2::new(gaussian(&mut rng, spec.noise.pixel), gaussian(&mut rng, spec.noise.pixel));
            let mut d = depth + gaussian(&mut rng, sd);
            let descriptor = descriptors[l.id]
                .iter()
                .map(|x| x + gaussian(&mut rng, spec.noise.descriptor))
                .collect();
            let outlier = rng.random::<f64>() < spec.outliers.feature_fraction;
            if outlier {
                if rng.random::<bool>() {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    pixel += Vector2::new(a.cos(), a.sin()) * spec.outliers.pixel_offset;
                } else {
                    d += if rng.random::<bool>() { 1.0 } else { -1.0 } * spec.outliers.depth_offset;
                }
            }
            fs.push(Feature::new(pixel, d, descriptor));
            fl.push(l.id);
            fo.push(outlier);
        }
        features.push(fs);
        feature_landmarks.push(fl);
        feature_outliers.push(fo);
    }

    // clouds, in each station's LiDAR frame
    let mut clouds = Vec::with_capacity(n);
    let mut point_surfaces = Vec::with_capacity(n);
    let mut point_outliers = Vec::with_capacity(n);
    for (i, pose) in poses.iter().enumerate() {
        let mut rng = stream(spec.seed, 100 + i as u64);
        let lidar = pose.compose(&te);
        let origin = *lidar.translation();
        let (mut pts, mut normals, mut ps, mut po) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..spec.lidar_samples {
            let (p, nrm, s) = sample_surfaces(&surfaces, &mut rng);
            let range = (p - origin).norm();
            if range > spec.max_range || !visible(&surfaces, &origin, &p) {
                continue;
            }
            let local = lidar.inverse_transform_point(&p);
            let ray = local / local.norm();
            let mut q = local + ray * gaussian(&mut rng, spec.noise.range);
            let outlier = rng.random::<f64>() < spec.outliers.lidar_fraction;
            if outlier {
                q += ray * if rng.random::<bool>() { 1.0 } else { -1.0 } * spec.outliers.lidar_offset;
            }
            pts.push(q);
            normals.push(lidar.rotation_matrix().transpose() * nrm);
            ps.push(s);
            po.push(outlier);
        }
        let mut cloud = PointCloud::new(pts);
        cloud.normals = Some(normals);
        clouds.push(cloud);
        point_surfaces.push(ps);
        point_outliers.push(po);
    }

    // rough registrations
    let mut rng = stream(spec.seed, 3);
    let mut rough = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let t = relative_cloud_transform(&poses[i], &poses[j], &te);
            rough.push(CloudTransform {
                target: i,
                source: j,
                transform: bounded_perturbation(&t, spec.rough_translation, spec.rough_rotation, &mut rng),
            });
        }
    }

    Ok(SyntheticScene {
        intrinsics: *k,
        width: spec.width,
        height: spec.height,
        features,
        clouds,
        rough,
        truth: GroundTruth {
            poses,
            extrinsic: te,
            landmarks,
            feature_landmarks,
            feature_outliers,
            point_surfaces,
            point_outliers,
            surfaces,
        },
    })
}

/// Area-uniform samples of the surfaces with their normals, for use as a
/// reference model.
pub fn surface_cloud(surfaces: &[Surface], count: usize, seed: u64) -> PointCloud {
    let mut rng = stream(seed, 6);
    let (mut pts, mut normals) = (Vec::with_capacity(count), Vec::with_capacity(count));
    if !surfaces.is_empty() {
        for _ in 0..count {
            let (p, n, _) = sample_surfaces(surfaces, &mut rng);
            pts.push(p);
            normals.push(n);
        }
    }
    let mut cloud = PointCloud::new(pts);
    cloud.normals = Some(normals);
    cloud
}

/// Shifts the neighbor of a `fraction` of observations by `offset` along its
/// normal. Returns the outlier labels.
pub fn inject_lidar_outliers(obs: &mut [LidarObservation], fraction: f64, offset: f64, seed: u64) -> Vec<bool> {
    let mut rng = stream(seed, 4);
    obs.iter_mut()
        .map(|o| {
            let hit = rng.random::<f64>() < fraction;
            if hit {
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                o.neighbor += o.normal * (s * offset);
            }
            hit
        })
        .collect()
}

/// Noise-free z-depth image of the surfaces seen from `camera_to_world`.
pub fn render_depth(surfaces: &[Surface], camera_to_world: &Pose, k: &CameraIntrinsics, width: u32, height: u32) -> DepthMap {
    let mut map = DepthMap::new(width, height);
    let r = camera_to_world.rotation_matrix();
    for v in 0..height {
        for u in 0..width {
            let ray = k.ray(&Vector2::new(u as f64, v as f64));
            let dir = (r * ray).normalize();
            if let Some(hit) = raycast(surfaces, camera_to_world.translation(), &dir) {
                let pc = camera_to_world.inverse_transform_point(&(camera_to_world.translation() + dir * hit.t));
                map.set(u, v, pc.z);
            }
        }
    }
    map
}

/// Labeled defects applied to a stereo depth map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoDefects {
    /// Relative depth noise σ.
    pub noise: f64,
    pub outlier_fraction: f64,
    /// Outlier depth offset, meters (sign random).
    pub outlier_offset: f64,
    pub holes: usize,
    /// Hole radius, pixels.
    pub hole_radius: f64,
    pub seed: u64,
}

impl Default for StereoDefects {
    fn default() -> Self {
        Self {
            noise: 0.0,
            outlier_fraction: 0.02,
            outlier_offset: 0.3,
            holes: 20,
            hole_radius: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoLabels {
    pub outliers: Vec<bool>,
    pub holes: Vec<bool>,
}

/// Corrupts a clean depth map with noise, outliers and circular holes.
pub fn corrupt_depth(clean: &DepthMap, defects: &StereoDefects) -> (DepthMap, StereoLabels) {
    let mut rng = stream(defects.seed, 5);
    let mut map = clean.clone();
    let len = (clean.width * clean.height) as usize;
    let mut outliers = vec![false; len];
    let mut holes = vec![false; len];
    let noise = Normal::new(0.0, 1.0).unwrap();
    for idx in 0..len {
        let d = clean.depth[idx];
        if !d.is_finite() {
            continue;
        }
        let mut v = d * (1.0 + defects.noise * noise.sample(&mut rng));
        if rng.random::<f64>() < defects.outlier_fraction {
            v += if rng.random::<bool>() { 1.0 } else { -1.0 } * defects.outlier_offset;
            outliers[idx] = true;
        }
        map.depth[idx] = if v > 0.0 { v } else { f64::NAN };
    }
    let r = defects.hole_radius;
    for _ in 0..defects.holes {
        let cu = rng.random_range(0.0..clean.width as f64);
        let cv = rng.random_range(0.0..clean.height as f64);
        let (u0, u1) = ((cu - r).floor().max(0.0) as u32, ((cu + r).ceil() as u32).min(clean.width - 1));
        let (v0, v1) = ((cv - r).floor().max(0.0) as u32, ((cv + r).ceil() as u32).min(clean.height - 1));
        for v in v0..=v1 {
            for u in u0..=u1 {
                let (du, dv) = (u as f64 - cu, v as f64 - cv);
                let idx = (v * clean.width + u) as usize;
                if du * du + dv * dv <= r * r && clean.depth[idx].is_finite() {
                    map.depth[idx] = f64::NAN;
                    holes[idx] = true;
                    outliers[idx] = false;
                }
            }
        }
    }
    (map, StereoLabels { outliers, holes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_perturbation_is_identity() {
        let p = Pose::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(perturb_pose(&p, 0.0, 0.0, 7), p);
        assert_eq!(perturb_pose(&p, 0.1, 0.1, 7), perturb_pose(&p, 0.1, 0.1, 7));
    }

    #[test]
    fn displacement_has_exact_magnitude() {
        let p = Pose::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let q = displace_pose(&p, 0.1, 5f64.to_radians(), 3);
        let (dt, dr) = p.distance(&q);
        assert!((dt - 0.1).abs() < 1e-12);
        assert!((dr - 5f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = SceneSpec {
            stations: 0,
            ..Default::default()
        };
        assert!(generate(&s).is_err());
        s.stations = 2;
        s.outliers.feature_fraction = 1.0;
        assert!(generate(&s).is_err());
        s.outliers.feature_fraction = 0.0;
        s.noise.pixel = -1.0;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn orbit_is_rebased_and_looks_inward() {
        let spec = SceneSpec {
            lidar_samples: 100,
            landmarks: 10,
            ..Default::default()
        };
        let scene = generate(&spec).unwrap();
        assert_eq!(scene.truth.poses[0], Pose::identity());
        assert_eq!(scene.rough.len(), 10);
        assert_eq!(scene.clouds.len(), 5);
    }

    #[test]
    fn look_at_axes() {
        let p = look_at(&Vector3::new(0.0, 0.0, -3.0), &Vector3::zeros());
        let r = p.rotation_matrix();
        assert!((r - Matrix3::identity()).norm() < 1e-12);
    }
}
