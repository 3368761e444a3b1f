//! Whitened residuals and their analytic Jacobians.
//!
//! Pose increments are `[dt, dθ]` with the rotation perturbed on the left
//! (see [`Pose::retract`]); landmark increments are plain 3-vectors.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x6, RowVector3, RowVector6, Vector2, Vector3};

use super::Problem;
use crate::geometry::{skew, CameraIntrinsics, DepthKind, GeometryError, Pose};
use crate::graph::{CameraObservation, LidarObservation};

/// Camera residual `[reprojection / σ_p; depth / σ_d]` with Jacobians.
#[derive(Debug, Clone, Copy)]
pub struct CameraEval {
    pub residual: Vector3<f64>,
    /// With respect to the camera pose increment.
    pub d_pose: Matrix3x6<f64>,
    /// With respect to the landmark position.
    pub d_landmark: Matrix3<f64>,
}

/// Point-to-plane residual with Jacobians for the target pose, source pose
/// and extrinsic increments.
#[derive(Debug, Clone, Copy)]
pub struct LidarEval {
    pub residual: f64,
    pub d_target: RowVector6<f64>,
    pub d_source: RowVector6<f64>,
    pub d_extrinsic: RowVector6<f64>,
}

/// Noise model for the three residual kinds.
#[derive(Debug, Clone, Copy)]
pub struct CameraNoise {
    pub pixel_sigma: f64,
    /// `None` derives `σ_d = (d² / (b f)) σ_p` per observation.
    pub depth_sigma: Option<f64>,
    pub depth_kind: DepthKind,
}

impl CameraNoise {
    pub fn depth_sigma(&self, k: &CameraIntrinsics, depth: f64) -> f64 {
        self.depth_sigma
            .unwrap_or_else(|| k.depth_sigma(depth, self.pixel_sigma))
    }
}

/// Evaluates a camera observation of `landmark` from a camera with pose
/// `camera_to_world`.
pub fn camera_factor(
    obs: &CameraObservation,
    camera_to_world: &Pose,
    landmark: &Vector3<f64>,
    k: &CameraIntrinsics,
    noise: &CameraNoise,
) -> Result<CameraEval, GeometryError> {
    let rt = camera_to_world.rotation_matrix().transpose();
    let rel = landmark - camera_to_world.translation();
    let pc = rt * rel;
    let pixel = k.project(&pc)?;
    let sp = noise.pixel_sigma;
    let sd = noise.depth_sigma(k, obs.depth);

    let (x, y, z) = (pc.x, pc.y, pc.z);
    let d_pix = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * x / (z * z),
        0.0,
        k.fy / z,
        -k.fy * y / (z * z),
    ) / sp;
    let d_depth: RowVector3<f64> = match noise.depth_kind {
        DepthKind::Range => pc.transpose() / pc.norm(),
        DepthKind::ZDepth => RowVector3::new(0.0, 0.0, 1.0),
    } / sd;

    // camera-frame point w.r.t. [dt, dθ] and the landmark
    let mut d_pc_pose = Matrix3x6::zeros();
    d_pc_pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rt));
    d_pc_pose.fixed_view_mut::<3, 3>(0, 3).copy_from(&(rt * skew(&rel)));

    let mut d_res_pc = Matrix3::zeros();
    d_res_pc.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_pix);
    d_res_pc.fixed_view_mut::<1, 3>(2, 0).copy_from(&d_depth);

    let reproj: Vector2<f64> = (pixel - obs.pixel) / sp;
    let depth_err = (noise.depth_kind.measure(&pc) - obs.depth) / sd;
    Ok(CameraEval {
        residual: Vector3::new(reproj.x, reproj.y, depth_err),
        d_pose: d_res_pc * d_pc_pose,
        d_landmark: d_res_pc * rt,
    })
}

/// Evaluates `nᵀ((T_i T_e)⁻¹ T_j T_e p − q) / σ_l`.
pub fn lidar_factor(obs: &LidarObservation, ti: &Pose, tj: &Pose, te: &Pose, sigma: f64) -> LidarEval {
    let re = te.rotation_matrix();
    let ri = ti.rotation_matrix();
    let rj = tj.rotation_matrix();
    let rep = re * obs.point;
    let cj = rep + te.translation();
    let rjc = rj * cj;
    let w = rjc + tj.translation();
    let ci = ri.transpose() * (w - ti.translation());
    let x = re.transpose() * (ci - te.translation());

    let nt = obs.normal.transpose() / sigma;
    let a = nt * re.transpose(); // ∂r/∂c_i
    let b = a * ri.transpose(); // ∂r/∂w

    let mut d_source = RowVector6::zeros();
    d_source.fixed_view_mut::<1, 3>(0, 0).copy_from(&b);
    d_source
        .fixed_view_mut::<1, 3>(0, 3)
        .copy_from(&(-b * skew(&rjc)));

    let mut d_target = RowVector6::zeros();
    d_target
        .fixed_view_mut::<1, 3>(0, 0)
        .copy_from(&(-a * ri.transpose()));
    d_target
        .fixed_view_mut::<1, 3>(0, 3)
        .copy_from(&(a * ri.transpose() * skew(&(w - ti.translation()))));

    let m = ri.transpose() * rj;
    let mut d_extrinsic = RowVector6::zeros();
    d_extrinsic
        .fixed_view_mut::<1, 3>(0, 0)
        .copy_from(&(a * (m - Matrix3::identity())));
    d_extrinsic
        .fixed_view_mut::<1, 3>(0, 3)
        .copy_from(&(a * (skew(&(ci - te.translation())) - m * skew(&rep))));

    LidarEval {
        residual: obs.normal.dot(&(x - obs.neighbor)) / sigma,
        d_target,
        d_source,
        d_extrinsic,
    }
}

fn noise(prob: &Problem) -> CameraNoise {
    CameraNoise {
        pixel_sigma: prob.sigmas.pixel,
        depth_sigma: prob.sigmas.depth,
        depth_kind: prob.depth_kind,
    }
}

/// Reprojection residual `(φ(l_k | K, T_i) − u) / σ_p`.
pub fn residual_feature(o: &CameraObservation, prob: &Problem) -> Result<Vector2<f64>, GeometryError> {
    let pose = &prob.poses[o.camera];
    let pc = pose.inverse_transform_point(&prob.landmarks[o.landmark].position);
    Ok((prob.intrinsics.project(&pc)? - o.pixel) / prob.sigmas.pixel)
}

/// Depth residual `(‖ψ(l_k | T_i)‖ − d) / σ_d` (or z-depth, per the problem's depth kind).
pub fn residual_depth(o: &CameraObservation, prob: &Problem) -> Result<f64, GeometryError> {
    let pose = &prob.poses[o.camera];
    let pc = pose.inverse_transform_point(&prob.landmarks[o.landmark].position);
    if pc.z <= crate::geometry::MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(pc.z));
    }
    let sd = noise(prob).depth_sigma(&prob.intrinsics, o.depth);
    Ok((prob.depth_kind.measure(&pc) - o.depth) / sd)
}

/// Point-to-plane residual `nᵀ(ψ(p | T_l,ij) − q) / σ_l`.
pub fn residual_lidar(o: &LidarObservation, prob: &Problem) -> f64 {
    let rel = crate::geometry::relative_cloud_transform(
        &prob.poses[o.target],
        &prob.poses[o.source],
        &prob.extrinsic,
    );
    o.normal.dot(&(rel.transform_point(&o.point) - o.neighbor)) / prob.sigmas.lidar
}

pub(crate) fn camera_noise(prob: &Problem) -> CameraNoise {
    noise(prob)
}

/// `½ Σ w (E_f² + E_d²) + ½ Σ w E_l²`. Camera observations behind their
/// camera contribute nothing.
pub fn total_cost(prob: &Problem) -> f64 {
    super::lm::cost_of(prob, None, &super::RobustKernel::None).unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3x6, Vector6};

    fn rand_pose(seed: f64) -> Pose {
        Pose::from_axis_angle(
            Vector3::new(0.3 * seed.sin(), 0.2 * (2.0 * seed).cos(), -0.25 * seed),
            Vector3::new(seed.cos(), 0.5 * seed, -0.3),
        )
    }

    #[test]
    fn camera_jacobian_matches_finite_differences() {
        let k = CameraIntrinsics::new(800.0, 780.0, 320.0, 240.0, 0.3).unwrap();
        let pose = rand_pose(0.7);
        let l = pose.transform_point(&Vector3::new(0.2, -0.1, 3.0));
        let obs = CameraObservation {
            camera: 1,
            landmark: 0,
            pixel: Vector2::new(300.0, 250.0),
            depth: 2.9,
            weight: 1.0,
        };
        for kind in [DepthKind::Range, DepthKind::ZDepth] {
            let noise = CameraNoise {
                pixel_sigma: 1.0,
                depth_sigma: None,
                depth_kind: kind,
            };
            let e = camera_factor(&obs, &pose, &l, &k, &noise).unwrap();
            let h = 1e-6;
            let mut fd = Matrix3x6::zeros();
            for c in 0..6 {
                let mut d = Vector6::zeros();
                d[c] = h;
                let rp = camera_factor(&obs, &pose.retract(&d), &l, &k, &noise).unwrap().residual;
                let rm = camera_factor(&obs, &pose.retract(&-d), &l, &k, &noise).unwrap().residual;
                fd.set_column(c, &((rp - rm) / (2.0 * h)));
            }
            assert!((fd - e.d_pose).norm() / fd.norm() < 1e-6);
        }
    }

    #[test]
    fn lidar_jacobian_zero_when_same_station_extrinsic() {
        let t = rand_pose(0.3);
        let te = rand_pose(1.1);
        let obs = LidarObservation {
            target: 1,
            source: 1,
            point: Vector3::new(1.0, 2.0, 0.5),
            neighbor: Vector3::new(1.0, 2.0, 0.4),
            normal: Vector3::z(),
            weight: 1.0,
        };
        let e = lidar_factor(&obs, &t, &t, &te, 0.05);
        assert!((e.residual - 0.1 / 0.05).abs() < 1e-9);
        assert!(e.d_extrinsic.norm() < 1e-9);
    }
}
