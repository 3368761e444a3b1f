//! Model accuracy: point-to-plane ICP and point-to-plane distance statistics.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix6, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspond::{KdTree, PointCloud};
use crate::geometry::Pose;
use crate::io::FormatError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluateError {
    #[error("empty input cloud")]
    EmptyInput,
    #[error("target cloud has no normals")]
    MissingNormals,
    #[error("no correspondences within range")]
    NoCorrespondences,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the update norm falls below this.
    pub tolerance: f64,
    /// Pairs farther apart than this are ignored, meters.
    pub max_correspondence_distance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-10,
            max_correspondence_distance: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    /// Source-to-target transform.
    pub transform: Pose,
    pub iterations: usize,
    pub converged: bool,
    /// RMS point-to-plane residual of the last correspondence set.
    pub rms: f64,
}

/// Point-to-plane ICP: minimizes `Σ (nᵀ(R p + t − q))²` over the source-to-
/// target transform starting from `init`. Hitting the iteration cap returns
/// the best estimate with `converged = false`.
pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult, EvaluateError> {
    if source.is_empty() || target.is_empty() {
        return Err(EvaluateError::EmptyInput);
    }
    if target.normals.is_none() {
        return Err(EvaluateError::MissingNormals);
    }
    let tree = KdTree::build(&target.points);
    let max_d2 = cfg.max_correspondence_distance * cfg.max_correspondence_distance;
    let mut t = *init;
    let mut rms = f64::NAN;
    for it in 0..cfg.max_iterations {
        let terms: Vec<Option<(Vector6<f64>, f64)>> = source
            .points
            .par_iter()
            .map(|p| {
                let x = t.transform_point(p);
                let (j, d2) = tree.nearest(&x)?;
                if d2 > max_d2 {
                    return None;
                }
                let n = target.normal(j)?;
                let r = n.dot(&(x - target.points[j]));
                let mut jac = Vector6::zeros();
                jac.fixed_rows_mut::<3>(0).copy_from(&n);
                jac.fixed_rows_mut::<3>(3).copy_from(&x.cross(&n));
                Some((jac, r))
            })
            .collect();
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut count = 0usize;
        let mut sq = 0.0;
        for (jac, r) in terms.into_iter().flatten() {
            h += jac * jac.transpose();
            g += jac * r;
            sq += r * r;
            count += 1;
        }
        if count == 0 {
            return Err(EvaluateError::NoCorrespondences);
        }
        rms = (sq / count as f64).sqrt();
        let Some(delta) = h.cholesky().map(|c| c.solve(&(-g))) else {
            return Ok(IcpResult {
                transform: t,
                iterations: it,
                converged: false,
                rms,
            });
        };
        // left update: x ↦ Exp(δθ) x + δt
        let step = Pose::from_axis_angle(delta.fixed_rows::<3>(3).into_owned(), delta.fixed_rows::<3>(0).into_owned());
        t = step.compose(&t);
        if delta.norm() < cfg.tolerance {
            return Ok(IcpResult {
                transform: t,
                iterations: it + 1,
                converged: true,
                rms,
            });
        }
    }
    Ok(IcpResult {
        transform: t,
        iterations: cfg.max_iterations,
        converged: false,
        rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceConfig {
    /// Points whose nearest truth neighbor is farther are excluded, meters.
    pub max_dist: f64,
    pub bins: usize,
    /// Report signed distances along the truth normal.
    pub signed: bool,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            max_dist: 0.02,
            bins: 100,
            signed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` monotone edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    /// Included model points.
    pub count: usize,
    pub excluded: usize,
    /// Model points per cm², from the median nearest-neighbor spacing.
    pub density_per_cm2: f64,
    pub histogram: Histogram,
}

/// Point-to-plane distance from every model point to the plane of its nearest
/// truth neighbor.
pub fn distance_map(model: &PointCloud, truth: &PointCloud, cfg: &DistanceConfig) -> Result<DistanceReport, EvaluateError> {
    if model.is_empty() || truth.is_empty() {
        return Err(EvaluateError::EmptyInput);
    }
    if truth.normals.is_none() {
        return Err(EvaluateError::MissingNormals);
    }
    let tree = KdTree::build(&truth.points);
    let max_d2 = cfg.max_dist * cfg.max_dist;
    let dists: Vec<Option<f64>> = model
        .points
        .par_iter()
        .map(|p| {
            let (j, d2) = tree.nearest(p)?;
            if d2 > max_d2 {
                return None;
            }
            let d = truth.normal(j)?.dot(&(p - truth.points[j]));
            Some(if cfg.signed { d } else { d.abs() })
        })
        .collect();
    let excluded = dists.iter().filter(|d| d.is_none()).count();
    let mut vals: Vec<f64> = dists.into_iter().flatten().collect();
    if vals.is_empty() {
        return Err(EvaluateError::NoCorrespondences);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std_dev = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();

    let bins = cfg.bins.max(1);
    let lo = if cfg.signed { -cfg.max_dist } else { 0.0 };
    let width = (cfg.max_dist - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0usize; bins];
    for v in &vals {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }

    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    let median = if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    };

    Ok(DistanceReport {
        mean,
        median,
        std_dev,
        count: m,
        excluded,
        density_per_cm2: density(model),
        histogram: Histogram { edges, counts },
    })
}

fn density(model: &PointCloud) -> f64 {
    if model.len() < 2 {
        return 0.0;
    }
    let tree = KdTree::build(&model.points);
    let mut spacing: Vec<f64> = model
        .points
        .par_iter()
        .filter_map(|p| tree.k_nearest(p, 2).get(1).map(|(_, d2)| d2.sqrt()))
        .collect();
    spacing.sort_by(f64::total_cmp);
    let s = spacing[spacing.len() / 2];
    if s > 0.0 {
        1e-4 / (s * s)
    } else {
        f64::INFINITY
    }
}

/// CSV with columns `bin_low,bin_high,count`.
pub fn write_histogram_csv(path: impl AsRef<Path>, report: &DistanceReport) -> Result<(), FormatError> {
    let path = path.as_ref();
    let h = &report.histogram;
    let mut out = String::from("bin_low,bin_high,count\n");
    for (b, c) in h.counts.iter().enumerate() {
        out.push_str(&format!("{:e},{:e},{}\n", h.edges[b], h.edges[b + 1], c));
    }
    let mut f = std::fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| FormatError::io(path, e))
}

/// Grid samples on an axis-aligned square patch with its normal.
pub fn plane_patch(center: Vector3<f64>, normal: Vector3<f64>, half: f64, spacing: f64) -> PointCloud {
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    let steps = (2.0 * half / spacing).round() as i64;
    let mut pts = Vec::new();
    for a in 0..=steps {
        for b in 0..=steps {
            let (x, y) = (-half + a as f64 * spacing, -half + b as f64 * spacing);
            pts.push(center + u * x + v * y);
        }
    }
    let len = pts.len();
    PointCloud {
        points: pts,
        normals: Some(vec![n; len]),
        curvatures: Some(vec![0.0; len]),
    }
}
