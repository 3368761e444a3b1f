//! Binary outlier gating on unwhitened residuals.

use serde::{Deserialize, Serialize};

use super::{Problem, SolverError};
use crate::geometry::relative_cloud_transform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateThresholds {
    /// Reprojection error, pixels.
    pub reprojection: f64,
    /// Depth error, meters.
    pub depth: f64,
    /// Point-to-plane distance, meters.
    pub lidar: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            reprojection: 3.0,
            depth: 0.01,
            lidar: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingStrategy {
    /// Gate every observation over a threshold.
    All,
    /// Gate at most one camera observation per landmark per pass, the one
    /// furthest over its threshold; a landmark left with a single observation
    /// has that one gated too, since nothing can confirm it. LiDAR
    /// observations are gated as in `All`.
    #[default]
    WorstPerLandmark,
}

/// Observations newly gated by one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateCounts {
    pub camera: usize,
    pub lidar: usize,
}

impl GateCounts {
    pub fn total(&self) -> usize {
        self.camera + self.lidar
    }
}

/// How far a camera observation is over its thresholds (> 1 means outlier).
fn camera_excess(prob: &Problem, i: usize, t: &GateThresholds) -> f64 {
    let o = &prob.camera_obs[i];
    let pc = prob.poses[o.camera].inverse_transform_point(&prob.landmarks[o.landmark].position);
    let Ok(pix) = prob.intrinsics.project(&pc) else {
        return f64::INFINITY;
    };
    let reproj = (pix - o.pixel).norm();
    let depth = (prob.depth_kind.measure(&pc) - o.depth).abs();
    let ratio = |err: f64, th: f64| {
        if th > 0.0 {
            err / th
        } else if err > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    ratio(reproj, t.reprojection).max(ratio(depth, t.depth))
}

/// Sets `w = 0` on observations whose errors exceed the thresholds. Weights
/// never increase. Fails when no weighted observation is left.
pub fn gate_outliers(
    prob: &mut Problem,
    thresholds: &GateThresholds,
    strategy: GatingStrategy,
) -> Result<GateCounts, SolverError> {
    let mut counts = GateCounts::default();

    let excess: Vec<(usize, f64)> = prob
        .camera_obs
        .iter()
        .enumerate()
        .filter(|(_, o)| o.weight > 0.0)
        .map(|(i, _)| (i, camera_excess(prob, i, thresholds)))
        .filter(|(_, e)| *e > 1.0)
        .collect();
    let to_gate: Vec<usize> = match strategy {
        GatingStrategy::All => excess.iter().map(|(i, _)| *i).collect(),
        GatingStrategy::WorstPerLandmark => {
            let mut worst: Vec<Option<(usize, f64)>> = vec![None; prob.landmarks.len()];
            for &(i, e) in &excess {
                let slot = &mut worst[prob.camera_obs[i].landmark];
                if slot.is_none_or(|(_, best)| e > best) {
                    *slot = Some((i, e));
                }
            }
            let mut active = vec![0usize; prob.landmarks.len()];
            for o in prob.camera_obs.iter().filter(|o| o.weight > 0.0) {
                active[o.landmark] += 1;
            }
            let mut out = Vec::new();
            for (k, w) in worst.iter().enumerate() {
                let Some((i, _)) = *w else { continue };
                out.push(i);
                if active[k] == 2 {
                    let rest = prob
                        .camera_obs
                        .iter()
                        .enumerate()
                        .position(|(j, o)| j != i && o.landmark == k && o.weight > 0.0);
                    out.extend(rest);
                }
            }
            out.sort_unstable();
            out
        }
    };
    for i in to_gate {
        prob.camera_obs[i].weight = 0.0;
        counts.camera += 1;
    }

    for o in prob.lidar_obs.iter_mut().filter(|o| o.weight > 0.0) {
        let rel = relative_cloud_transform(&prob.poses[o.target], &prob.poses[o.source], &prob.extrinsic);
        let err = o.normal.dot(&(rel.transform_point(&o.point) - o.neighbor)).abs();
        if err > thresholds.lidar || (thresholds.lidar <= 0.0 && err > 0.0) {
            o.weight = 0.0;
            counts.lidar += 1;
        }
    }

    if prob.residual_count() == 0 {
        return Err(SolverError::AllObservationsGated);
    }
    Ok(counts)
}
