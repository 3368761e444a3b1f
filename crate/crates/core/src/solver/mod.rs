//! Joint estimation of station poses, landmarks and the LiDAR-camera
//! extrinsic.
//!
//! The cost is `½ Σ w (E_f² + E_d²) + ½ Σ w E_l²` over camera and LiDAR
//! observations. It is minimized with Levenberg-Marquardt on a reduced camera
//! system (landmarks eliminated by a Schur complement), wrapped in an outlier
//! gating loop and an ICP-style re-association loop.

mod gating;
mod init;
mod joint;
mod lm;
pub mod residuals;

pub use gating::{gate_outliers, GateCounts, GateThresholds, GatingStrategy};
pub use init::{initial_poses, kabsch};
pub use joint::solve_joint;
pub use lm::{optimize, unconstrained_parameters};
pub use residuals::{residual_depth, residual_feature, residual_lidar, total_cost};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspond::{CorrespondError, LidarScans};
use crate::geometry::{CameraIntrinsics, DepthKind, Landmark, Pose};
use crate::graph::{CameraObservation, LidarObservation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("optimization diverged at iteration {iteration} (cost {cost})")]
    Diverged { iteration: usize, cost: f64 },
    #[error("normal equations are singular; unconstrained: {}", blocks.join(", "))]
    SingularNormalEquations { blocks: Vec<String> },
    #[error("every observation has been gated as an outlier")]
    AllObservationsGated,
    #[error(transparent)]
    Correspond(#[from] CorrespondError),
}

/// Measurement standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sigmas {
    /// Feature location noise σ_p, pixels.
    pub pixel: f64,
    /// Constant stereo depth noise σ_d in meters. When absent, σ_d is derived
    /// per observation as `(d² / (b f)) σ_p`.
    pub depth: Option<f64>,
    /// Point-to-plane noise σ_l, meters.
    pub lidar: f64,
}

impl Default for Sigmas {
    fn default() -> Self {
        Self {
            pixel: 1.0,
            depth: None,
            lidar: 0.05,
        }
    }
}

/// The optimization state together with its observations.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Camera-to-world station poses; `poses[0]` is the identity.
    pub poses: Vec<Pose>,
    pub landmarks: Vec<Landmark>,
    /// LiDAR-to-camera transform.
    pub extrinsic: Pose,
    pub camera_obs: Vec<CameraObservation>,
    pub lidar_obs: Vec<LidarObservation>,
    pub intrinsics: CameraIntrinsics,
    pub sigmas: Sigmas,
    pub depth_kind: DepthKind,
    /// Clouds for re-association; without them the LiDAR observations stay fixed.
    pub scans: Option<LidarScans>,
}

/// The serializable part of a [`Problem`]: everything but the clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemState {
    pub poses: Vec<Pose>,
    pub landmarks: Vec<Landmark>,
    pub extrinsic: Pose,
    pub camera_obs: Vec<CameraObservation>,
    pub lidar_obs: Vec<LidarObservation>,
    pub intrinsics: CameraIntrinsics,
    pub sigmas: Sigmas,
    pub depth_kind: DepthKind,
}

impl From<&Problem> for ProblemState {
    fn from(p: &Problem) -> Self {
        Self {
            poses: p.poses.clone(),
            landmarks: p.landmarks.clone(),
            extrinsic: p.extrinsic,
            camera_obs: p.camera_obs.clone(),
            lidar_obs: p.lidar_obs.clone(),
            intrinsics: p.intrinsics,
            sigmas: p.sigmas,
            depth_kind: p.depth_kind,
        }
    }
}

impl From<ProblemState> for Problem {
    fn from(s: ProblemState) -> Self {
        Self {
            poses: s.poses,
            landmarks: s.landmarks,
            extrinsic: s.extrinsic,
            camera_obs: s.camera_obs,
            lidar_obs: s.lidar_obs,
            intrinsics: s.intrinsics,
            sigmas: s.sigmas,
            depth_kind: s.depth_kind,
            scans: None,
        }
    }
}

impl Problem {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidProblem(m));
        let n = self.poses.len();
        if n == 0 {
            return bad("no poses".into());
        }
        let (dt, dr) = self.poses[0].distance(&Pose::identity());
        if dt > 1e-12 || dr > 1e-12 {
            return bad("poses[0] must be the identity".into());
        }
        for (i, l) in self.landmarks.iter().enumerate() {
            if l.id != i {
                return bad(format!("landmark ids must be contiguous: slot {i} holds id {}", l.id));
            }
        }
        for o in &self.camera_obs {
            if o.camera >= n || o.landmark >= self.landmarks.len() {
                return bad(format!("camera observation references camera {} landmark {}", o.camera, o.landmark));
            }
        }
        for o in &self.lidar_obs {
            if o.target >= o.source || o.source >= n {
                return bad(format!("lidar observation has invalid pair ({}, {})", o.target, o.source));
            }
        }
        if !(self.sigmas.pixel > 0.0 && self.sigmas.lidar > 0.0) || self.sigmas.depth.is_some_and(|d| d <= 0.0) {
            return bad("sigmas must be positive".into());
        }
        self.intrinsics
            .validate()
            .map_err(|e| SolverError::InvalidProblem(e.to_string()))
    }

    /// Number of scalar residuals carried by active observations.
    pub fn residual_count(&self) -> usize {
        3 * self.camera_obs.iter().filter(|o| o.weight > 0.0).count()
            + self.lidar_obs.iter().filter(|o| o.weight > 0.0).count()
    }

    pub fn gated_counts(&self) -> (usize, usize) {
        (
            self.camera_obs.iter().filter(|o| o.weight == 0.0).count(),
            self.lidar_obs.iter().filter(|o| o.weight == 0.0).count(),
        )
    }

    /// Sets every LiDAR observation's weight.
    pub fn set_lidar_weights(&mut self, w: f64) {
        for o in &mut self.lidar_obs {
            o.weight = w;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularPolicy {
    /// Fail with [`SolverError::SingularNormalEquations`].
    #[default]
    Error,
    /// Record the unconstrained parameters in the report and continue.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RobustKernel {
    #[default]
    None,
    /// Huber loss on the whitened residual norm of each observation.
    Huber { delta: f64 },
}

impl RobustKernel {
    /// `ρ(s)` for a squared whitened norm `s`.
    pub(crate) fn rho(&self, s: f64) -> f64 {
        match *self {
            RobustKernel::None => s,
            RobustKernel::Huber { delta } => {
                if s <= delta * delta {
                    s
                } else {
                    2.0 * delta * s.sqrt() - delta * delta
                }
            }
        }
    }

    /// IRLS weight `ρ'(s)`.
    pub(crate) fn weight(&self, s: f64) -> f64 {
        match *self {
            RobustKernel::None => 1.0,
            RobustKernel::Huber { delta } => {
                if s <= delta * delta {
                    1.0
                } else {
                    delta / s.sqrt()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub relative_cost_tolerance: f64,
    /// Stop when the gradient ∞-norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when the step is this small relative to the state.
    pub step_tolerance: f64,
    pub initial_lambda: f64,
    /// Keep the extrinsic fixed at its current value.
    pub fix_extrinsic: bool,
    pub robust: RobustKernel,
    pub singular: SingularPolicy,
    pub thresholds: GateThresholds,
    pub gating: GatingStrategy,
    /// Upper bound on optimize/gate passes per association round.
    pub max_gating_passes: usize,
    /// Number of association rounds; the first uses the supplied LiDAR
    /// observations, later ones re-extract them.
    pub reassociation_rounds: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_cost_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_lambda: 1e-4,
            fix_extrinsic: false,
            robust: RobustKernel::None,
            singular: SingularPolicy::Error,
            thresholds: GateThresholds::default(),
            gating: GatingStrategy::default(),
            max_gating_passes: 20,
            reassociation_rounds: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Gated (camera, LiDAR) observations at the end.
    pub outliers: (usize, usize),
    pub reassociation_rounds: usize,
    pub status: ConvergenceStatus,
    /// Parameters the data leaves unconstrained at the solution.
    pub unconstrained: Vec<String>,
    pub camera_observations: usize,
    pub lidar_observations: usize,
}
