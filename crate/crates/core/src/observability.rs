//! Uniqueness conditions for the extrinsic and cost sweeps around a solution.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::io::FormatError;
use crate::solver::{total_cost, Problem, ProblemState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservabilityError {
    #[error("sweep needs an odd, positive step count (got {0})")]
    InvalidSteps(usize),
    #[error("sweep half-range must be positive and finite (got {0})")]
    InvalidRange(f64),
}

/// Relative camera motion and the matching LiDAR motion, `T_c T_e = T_e T_h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPair {
    pub tc: Pose,
    pub th: Pose,
}

/// Motion pairs for every station pair `i < j`.
pub fn motion_pairs(poses: &[Pose], extrinsic: &Pose) -> Vec<MotionPair> {
    let te_inv = extrinsic.inverse();
    let mut out = Vec::new();
    for i in 0..poses.len() {
        for j in i + 1..poses.len() {
            let tc = poses[i].inverse().compose(&poses[j]);
            let th = te_inv.compose(&tc).compose(extrinsic);
            out.push(MotionPair { tc, th });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uniqueness {
    pub unique: bool,
    /// One entry per failed condition.
    pub reasons: Vec<String>,
}

pub const DEFAULT_ANGLE_TOL: f64 = 1.0 * std::f64::consts::PI / 180.0;

/// The extrinsic is unique when at least two motion pairs exist and two of
/// the rotating ones have non-colinear camera rotation axes. Pairs rotating by
/// no more than `angle_tol` carry no axis and are left out of the axis test.
pub fn check_uniqueness(pairs: &[MotionPair], angle_tol: f64) -> Uniqueness {
    let mut reasons = Vec::new();
    if pairs.len() < 2 {
        reasons.push("fewer than 2 motion pairs".to_string());
    }
    let axes: Vec<Vector3<f64>> = pairs
        .iter()
        .filter(|p| p.tc.angle() > angle_tol)
        .filter_map(|p| p.tc.axis())
        .collect();
    let skipped = pairs.len() - axes.len();
    if skipped > 0 {
        reasons.push(format!("{skipped} motion pair(s) rotate by at most the angle tolerance"));
    }
    if pairs.len() >= 2 {
        let spread = axes.iter().enumerate().any(|(a, u)| {
            axes[a + 1..]
                .iter()
                .any(|v| u.dot(v).abs().clamp(0.0, 1.0).acos() > angle_tol)
        });
        if axes.len() < 2 {
            reasons.push("fewer than 2 motion pairs with a rotation".to_string());
        } else if !spread {
            reasons.push("rotation axes are colinear".to_string());
        }
    }
    let unique = pairs.len() >= 2 && axes.len() >= 2 && !reasons.iter().any(|r| r.contains("colinear") || r.starts_with("fewer"));
    Uniqueness { unique, reasons }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDimension {
    X,
    Y,
    Z,
    /// Rotation about the camera x axis.
    Roll,
    /// Rotation about the camera y axis.
    Pitch,
    /// Rotation about the camera z axis.
    Yaw,
}

impl SweepDimension {
    pub const ALL: [SweepDimension; 6] = [Self::X, Self::Y, Self::Z, Self::Roll, Self::Pitch, Self::Yaw];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_rotation(self) -> bool {
        self.index() >= 3
    }
}

impl fmt::Display for SweepDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = ["x", "y", "z", "roll", "pitch", "yaw"][self.index()];
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub dimension: SweepDimension,
    /// Meters or radians.
    pub offsets: Vec<f64>,
    pub costs: Vec<f64>,
}

impl SweepResult {
    pub fn center_cost(&self) -> f64 {
        self.costs[self.costs.len() / 2]
    }

    /// `(max − min) / max(cost at 0, ε)`.
    pub fn relative_variation(&self) -> f64 {
        let max = self.costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.costs.iter().cloned().fold(f64::INFINITY, f64::min);
        (max - min) / self.center_cost().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    /// Meters.
    pub translation_half_range: f64,
    /// Radians.
    pub rotation_half_range: f64,
    pub steps: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            translation_half_range: 0.05,
            rotation_half_range: 2f64.to_radians(),
            steps: 41,
        }
    }
}

/// `T_e` moved by `offset` along one dimension: translations are added,
/// rotations are applied about the camera axes.
pub fn perturb_extrinsic(te: &Pose, dimension: SweepDimension, offset: f64) -> Pose {
    let mut d = Vector6::zeros();
    d[dimension.index()] = offset;
    te.retract(&d)
}

/// Total cost along a uniform grid of extrinsic offsets, all other parameters
/// held at their current values.
pub fn sweep_extrinsic(
    prob: &Problem,
    dimension: SweepDimension,
    half_range: f64,
    steps: usize,
) -> Result<SweepResult, ObservabilityError> {
    if steps == 0 || steps.is_multiple_of(2) {
        return Err(ObservabilityError::InvalidSteps(steps));
    }
    if !(half_range > 0.0 && half_range.is_finite()) {
        return Err(ObservabilityError::InvalidRange(half_range));
    }
    let m = (steps - 1).max(1) as f64;
    let offsets: Vec<f64> = (0..steps)
        .map(|k| half_range * (2.0 * k as f64 - (steps - 1) as f64) / m)
        .collect();
    let snapshot = Problem::from(ProblemState::from(prob));
    let costs = offsets
        .par_iter()
        .map(|&off| {
            let mut p = snapshot.clone();
            if off != 0.0 {
                p.extrinsic = perturb_extrinsic(&prob.extrinsic, dimension, off);
            }
            total_cost(&p)
        })
        .collect();
    Ok(SweepResult {
        dimension,
        offsets,
        costs,
    })
}

/// Sweeps all six dimensions.
pub fn sweep_all(prob: &Problem, spec: &SweepSpec) -> Result<Vec<SweepResult>, ObservabilityError> {
    SweepDimension::ALL
        .iter()
        .map(|&d| {
            let h = if d.is_rotation() {
                spec.rotation_half_range
            } else {
                spec.translation_half_range
            };
            sweep_extrinsic(prob, d, h, spec.steps)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flatness {
    Constrained,
    Flat,
}

/// Flags a dimension flat when its relative variation is below `rel_tol`.
pub fn flatness_report(sweeps: &[SweepResult], rel_tol: f64) -> Vec<(SweepDimension, Flatness)> {
    sweeps
        .iter()
        .map(|s| {
            let f = if s.relative_variation() < rel_tol {
                Flatness::Flat
            } else {
                Flatness::Constrained
            };
            (s.dimension, f)
        })
        .collect()
}

/// CSV with columns `dimension,offset,cost`.
pub fn write_sweep_csv(path: impl AsRef<Path>, sweeps: &[SweepResult]) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut out = String::from("dimension,offset,cost\n");
    for s in sweeps {
        for (o, c) in s.offsets.iter().zip(&s.costs) {
            out.push_str(&format!("{},{:e},{:e}\n", s.dimension, o, c));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(axis: Vector3<f64>, angle: f64) -> MotionPair {
        let tc = Pose::from_axis_angle(axis.normalize() * angle, Vector3::new(0.1, 0.0, 0.0));
        MotionPair { tc: tc, th: tc }
    }

    #[test]
    fn one_pair_is_not_unique() {
        let u = check_uniqueness(&[pair(Vector3::z(), 0.5)], DEFAULT_ANGLE_TOL);
        assert!(!u.unique);
        assert!(u.reasons.iter().any(|r| r == "fewer than 2 motion pairs"));
    }

    #[test]
    fn colinear_axes_are_not_unique() {
        let u = check_uniqueness(&[pair(Vector3::z(), 0.5), pair(Vector3::z(), 0.3)], DEFAULT_ANGLE_TOL);
        assert!(!u.unique);
        assert!(u.reasons.iter().any(|r| r.contains("colinear")));
        let u = check_uniqueness(&[pair(Vector3::z(), 0.5), pair(-Vector3::z(), 0.3)], DEFAULT_ANGLE_TOL);
        assert!(!u.unique);
    }

    #[test]
    fn orthogonal_axes_are_unique() {
        let a = 30f64.to_radians();
        let u = check_uniqueness(&[pair(Vector3::z(), a), pair(Vector3::x(), a)], DEFAULT_ANGLE_TOL);
        assert!(u.unique, "{:?}", u.reasons);
        assert!(u.reasons.is_empty());
    }

    #[test]
    fn pure_translations_are_not_unique() {
        let t = |x: f64| MotionPair {
            tc: Pose::from_translation(Vector3::new(x, 0.0, 0.0)),
            th: Pose::from_translation(Vector3::new(x, 0.0, 0.0)),
        };
        let u = check_uniqueness(&[t(1.0), t(2.0), t(3.0)], DEFAULT_ANGLE_TOL);
        assert!(!u.unique);
    }

    #[test]
    fn flatness_classification() {
        let s = |costs: Vec<f64>| SweepResult {
            dimension: SweepDimension::X,
            offsets: vec![-1.0, 0.0, 1.0],
            costs,
        };
        let r = flatness_report(&[s(vec![2.0, 2.0, 2.0]), s(vec![3.0, 2.0, 3.0])], 1e-6);
        assert_eq!(r[0].1, Flatness::Flat);
        assert_eq!(r[1].1, Flatness::Constrained);
    }

    #[test]
    fn perturbation_axes() {
        let te = Pose::identity();
        let p = perturb_extrinsic(&te, SweepDimension::Y, 0.2);
        assert!((p.translation() - Vector3::new(0.0, 0.2, 0.0)).norm() < 1e-15);
        let r = perturb_extrinsic(&te, SweepDimension::Yaw, 0.3);
        assert!((r.axis().unwrap() - Vector3::z()).norm() < 1e-12);
        assert!((r.angle() - 0.3).abs() < 1e-12);
    }
}
