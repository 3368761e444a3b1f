//! Initial station poses from rough LiDAR registrations and shared landmarks.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix3, Vector3};

use super::SolverError;
use crate::geometry::{CameraIntrinsics, DepthKind, Pose};
use crate::graph::CameraObservation;
use crate::io::CloudTransform;

/// Least-squares rigid transform `T` with `dst ≈ T · src`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut v = vt.transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        v.column_mut(2).neg_mut();
    }
    let sv = &svd.singular_values;
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        // collinear points leave the rotation undetermined
        return None;
    }
    let r = v * u.transpose();
    Some(Pose::from_rotation_matrix(&r, cd - r * cs))
}

/// Camera-to-world poses with `T_0 = I`, found by a breadth-first walk from
/// station 0. Rough LiDAR registrations are preferred; a camera-only edge is
/// resolved by aligning the back-projected landmarks both stations share.
pub fn initial_poses(
    n: usize,
    observations: &[CameraObservation],
    intrinsics: &CameraIntrinsics,
    depth_kind: DepthKind,
    rough: &[CloudTransform],
    extrinsic: &Pose,
) -> Result<Vec<Pose>, SolverError> {
    // relative camera motions keyed by (from, to): T_from⁻¹ T_to
    let mut edges: BTreeMap<(usize, usize), Pose> = BTreeMap::new();
    let te_inv = extrinsic.inverse();
    for r in rough {
        if r.target >= n || r.source >= n {
            return Err(SolverError::InvalidProblem(format!(
                "rough transform references stations ({}, {})",
                r.target, r.source
            )));
        }
        let rel = extrinsic.compose(&r.transform).compose(&te_inv);
        edges.insert((r.target, r.source), rel);
        edges.insert((r.source, r.target), rel.inverse());
    }

    let mut local: Vec<BTreeMap<usize, Vector3<f64>>> = vec![BTreeMap::new(); n];
    for o in observations {
        if o.camera < n && o.depth.is_finite() && o.depth > 0.0 {
            local[o.camera].insert(o.landmark, intrinsics.back_project(&o.pixel, o.depth, depth_kind));
        }
    }
    for a in 0..n {
        for b in 0..n {
            if a == b || edges.contains_key(&(a, b)) {
                continue;
            }
            let (mut pa, mut pb) = (Vec::new(), Vec::new());
            for (k, x) in &local[a] {
                if let Some(y) = local[b].get(k) {
                    pa.push(*x);
                    pb.push(*y);
                }
            }
            if let Some(t) = kabsch(&pb, &pa) {
                edges.insert((a, b), t);
            }
        }
    }

    let mut poses: Vec<Option<Pose>> = vec![None; n];
    if n == 0 {
        return Ok(Vec::new());
    }
    poses[0] = Some(Pose::identity());
    let mut queue = VecDeque::from([0usize]);
    while let Some(a) = queue.pop_front() {
        let ta = poses[a].unwrap();
        for b in 0..n {
            if poses[b].is_none() {
                if let Some(rel) = edges.get(&(a, b)) {
                    poses[b] = Some(ta.compose(rel));
                    queue.push_back(b);
                }
            }
        }
    }
    poses
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| SolverError::InvalidProblem(format!("station {i} is not connected to station 0"))))
        .collect()
}
