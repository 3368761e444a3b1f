//! LiDAR observation extraction: normals, key-point sampling and
//! point-to-plane correspondences between overlapping clouds.

mod kdtree;

pub use kdtree::KdTree;

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relative_cloud_transform, Pose};
use crate::graph::{Adjacency, LidarObservation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrespondError {
    #[error("cloud {0} has no normals")]
    MissingNormals(usize),
    #[error("requested {count} key points from a cloud of {size}")]
    CountExceedsCloud { count: usize, size: usize },
    #[error("normal estimation needs k >= 3 and more than k points (k={k}, points={points})")]
    TooFewPoints { k: usize, points: usize },
    #[error("expected {expected} poses, got {found}")]
    PoseCountMismatch { expected: usize, found: usize },
}

/// Point set in the LiDAR frame of one station. Invalid normals are NaN.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub curvatures: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            normals: None,
            curvatures: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Normal of point `i` when present and valid.
    pub fn normal(&self, i: usize) -> Option<Vector3<f64>> {
        let n = self.normals.as_ref()?[i];
        n.iter().all(|c| c.is_finite()).then_some(n)
    }

    pub fn curvature(&self, i: usize) -> Option<f64> {
        self.curvatures.as_ref().map(|c| c[i]).filter(|c| c.is_finite())
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        let rot = pose.rotation();
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| rot * n).collect()),
            curvatures: self.curvatures.clone(),
        }
    }

    /// Appends another cloud; attributes missing on one side are filled with NaN.
    pub fn extend(&mut self, other: &PointCloud) {
        let (na, nb) = (self.len(), other.len());
        self.normals = merge_attr(
            self.normals.take(),
            other.normals.as_ref(),
            na,
            nb,
            Vector3::repeat(f64::NAN),
        );
        self.curvatures = merge_attr(self.curvatures.take(), other.curvatures.as_ref(), na, nb, f64::NAN);
        self.points.extend_from_slice(&other.points);
    }
}

fn merge_attr<T: Clone>(a: Option<Vec<T>>, b: Option<&Vec<T>>, na: usize, nb: usize, fill: T) -> Option<Vec<T>> {
    if a.is_none() && b.is_none() {
        return None;
    }
    let mut v = a.unwrap_or_else(|| vec![fill.clone(); na]);
    match b {
        Some(b) => v.extend_from_slice(b),
        None => v.resize(na + nb, fill),
    }
    Some(v)
}

/// Covariance eigen-analysis of a neighborhood: (normal, curvature), or `None`
/// when the neighbors are (nearly) collinear.
pub fn fit_plane(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let l0 = eig.eigenvalues[idx[0]].max(0.0);
    let l1 = eig.eigenvalues[idx[1]].max(0.0);
    let l2 = eig.eigenvalues[idx[2]].max(0.0);
    if l2 <= 0.0 || l1 <= 1e-12 * l2 {
        return None;
    }
    let normal = eig.eigenvectors.column(idx[0]).into_owned().normalize();
    Some((normal, l0 / (l0 + l1 + l2)))
}

/// Per-point normal and curvature from the `k` nearest neighbors (the point
/// itself included). Normals face the sensor origin. Degenerate
/// neighborhoods get NaN normal and curvature.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud, CorrespondError> {
    if k < 3 || cloud.len() < k + 1 {
        return Err(CorrespondError::TooFewPoints {
            k,
            points: cloud.len(),
        });
    }
    let tree = KdTree::build(&cloud.points);
    let fitted: Vec<(Vector3<f64>, f64)> = cloud
        .points
        .par_iter()
        .map(|p| {
            let nb: Vec<Vector3<f64>> = tree
                .k_nearest(p, k)
                .into_iter()
                .map(|(i, _)| cloud.points[i])
                .collect();
            match fit_plane(&nb) {
                Some((n, c)) => {
                    let n = if n.dot(&(-p)) < 0.0 { -n } else { n };
                    (n, c)
                }
                None => (Vector3::repeat(f64::NAN), f64::NAN),
            }
        })
        .collect();
    let invalid = fitted.iter().filter(|(n, _)| n.x.is_nan()).count();
    if invalid > 0 {
        warn!("{invalid} points have degenerate neighborhoods; their normals are invalid");
    }
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(fitted.iter().map(|f| f.0).collect()),
        curvatures: Some(fitted.iter().map(|f| f.1).collect()),
    })
}

/// Uniform sample of `count` distinct indices, reproducible for a given seed.
pub fn sample_keypoints(
    cloud: &PointCloud,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>, CorrespondError> {
    if count > cloud.len() {
        return Err(CorrespondError::CountExceedsCloud {
            count,
            size: cloud.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, cloud.len(), count).into_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrespondConfig {
    /// Association gate on the point-to-point distance, meters.
    pub max_distance: f64,
    pub keypoints_per_cloud: usize,
    /// Neighbors used for normal estimation.
    pub normal_k: usize,
    /// Draw fresh key points at every re-association round.
    pub resample_keypoints: bool,
}

impl Default for CorrespondConfig {
    fn default() -> Self {
        Self {
            max_distance: 0.1,
            keypoints_per_cloud: 2000,
            normal_k: 20,
            resample_keypoints: false,
        }
    }
}

/// Clouds with their search indices and key points, kept for re-association.
#[derive(Debug, Clone)]
pub struct LidarScans {
    pub clouds: Vec<PointCloud>,
    pub trees: Vec<KdTree>,
    pub keypoints: Vec<Vec<usize>>,
    pub adjacency: Adjacency,
    pub config: CorrespondConfig,
    pub seed: u64,
}

impl LidarScans {
    /// Builds indices and samples key points (`min(count, |cloud|)` per cloud).
    pub fn new(
        clouds: Vec<PointCloud>,
        adjacency: Adjacency,
        config: CorrespondConfig,
        seed: u64,
    ) -> Result<Self, CorrespondError> {
        for (i, c) in clouds.iter().enumerate() {
            if c.normals.is_none() {
                return Err(CorrespondError::MissingNormals(i));
            }
        }
        let trees = clouds.par_iter().map(|c| KdTree::build(&c.points)).collect();
        let keypoints = Self::draw(&clouds, &config, seed)?;
        Ok(Self {
            clouds,
            trees,
            keypoints,
            adjacency,
            config,
            seed,
        })
    }

    fn draw(
        clouds: &[PointCloud],
        config: &CorrespondConfig,
        seed: u64,
    ) -> Result<Vec<Vec<usize>>, CorrespondError> {
        clouds
            .iter()
            .enumerate()
            .map(|(i, c)| {
                sample_keypoints(c, config.keypoints_per_cloud.min(c.len()), seed.wrapping_add(i as u64))
            })
            .collect()
    }

    /// Re-draws key points for a given round (used when resampling is on).
    pub fn resample(&mut self, round: u64) -> Result<(), CorrespondError> {
        let seed = self.seed.wrapping_add(round.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.keypoints = Self::draw(&self.clouds, &self.config, seed)?;
        Ok(())
    }

    pub fn extract(&self, poses: &[Pose], te: &Pose) -> Result<Vec<LidarObservation>, CorrespondError> {
        extract_with_index(
            &self.clouds,
            &self.trees,
            &self.keypoints,
            &self.adjacency,
            poses,
            te,
            self.config.max_distance,
        )
    }
}

/// Builds point-to-plane observations for every connected pair `(i < j)`:
/// key points of source `j` are mapped into target `i`, matched to their
/// nearest neighbor, and kept when within `max_dist` and the neighbor has a
/// valid normal.
pub fn extract_lidar_observations(
    clouds: &[PointCloud],
    adjacency: &Adjacency,
    poses: &[Pose],
    te: &Pose,
    max_dist: f64,
    keypoints_per_cloud: usize,
    seed: u64,
) -> Result<Vec<LidarObservation>, CorrespondError> {
    let config = CorrespondConfig {
        max_distance: max_dist,
        keypoints_per_cloud,
        ..Default::default()
    };
    let scans = LidarScans::new(clouds.to_vec(), adjacency.clone(), config, seed)?;
    scans.extract(poses, te)
}

fn extract_with_index(
    clouds: &[PointCloud],
    trees: &[KdTree],
    keypoints: &[Vec<usize>],
    adjacency: &Adjacency,
    poses: &[Pose],
    te: &Pose,
    max_dist: f64,
) -> Result<Vec<LidarObservation>, CorrespondError> {
    if poses.len() != clouds.len() {
        return Err(CorrespondError::PoseCountMismatch {
            expected: clouds.len(),
            found: poses.len(),
        });
    }
    let max_d2 = max_dist * max_dist;
    let per_pair: Vec<Vec<LidarObservation>> = adjacency
        .edges()
        .par_iter()
        .map(|&(i, j)| {
            let rel = relative_cloud_transform(&poses[i], &poses[j], te);
            let target = &clouds[i];
            let mut out = Vec::new();
            for &kp in &keypoints[j] {
                let p = clouds[j].points[kp];
                let x = rel.transform_point(&p);
                let Some((qi, d2)) = trees[i].nearest(&x) else {
                    continue;
                };
                if d2 > max_d2 {
                    continue;
                }
                let Some(normal) = target.normal(qi) else {
                    continue;
                };
                out.push(LidarObservation {
                    target: i,
                    source: j,
                    point: p,
                    neighbor: target.points[qi],
                    normal,
                    weight: 1.0,
                });
            }
            if out.is_empty() {
                warn!("cloud pair ({i}, {j}) produced no LiDAR observations");
            }
            out
        })
        .collect();
    Ok(per_pair.into_iter().flatten().collect())
}
