//! Levenberg-Marquardt on the reduced camera system.

use log::debug;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6x3, SymmetricEigen, Vector3, Vector6};
use rayon::prelude::*;

use super::residuals::{camera_factor, camera_noise, lidar_factor, CameraEval, LidarEval};
use super::{ConvergenceStatus, Problem, RobustKernel, SingularPolicy, SolveReport, SolverConfig, SolverError};

/// Floor for the Marquardt diagonal scaling so zero-curvature directions are
/// still damped.
const DIAG_FLOOR: f64 = 1e-9;
const MAX_LAMBDA: f64 = 1e16;

/// Parameter layout of the reduced system: poses 1..N (pose 0 is the gauge),
/// then the extrinsic when it is free. Landmarks are eliminated.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    n_poses: usize,
    extrinsic: bool,
}

impl Layout {
    pub(crate) fn new(prob: &Problem, fix_extrinsic: bool) -> Self {
        Self {
            n_poses: prob.poses.len(),
            extrinsic: !fix_extrinsic,
        }
    }

    fn pose(&self, i: usize) -> Option<usize> {
        (i > 0).then(|| 6 * (i - 1))
    }

    fn extrinsic(&self) -> Option<usize> {
        self.extrinsic.then(|| 6 * (self.n_poses - 1))
    }

    fn dim(&self) -> usize {
        6 * (self.n_poses - 1) + if self.extrinsic { 6 } else { 0 }
    }

    fn name(&self, idx: usize) -> String {
        let comp = ["translation.x", "translation.y", "translation.z", "rotation.x", "rotation.y", "rotation.z"];
        match self.extrinsic() {
            Some(e) if idx >= e => format!("extrinsic.{}", comp[idx - e]),
            _ => format!("pose[{}].{}", idx / 6 + 1, comp[idx % 6]),
        }
    }
}

/// Observations taking part in one optimization call.
pub(crate) struct Active {
    camera: Vec<bool>,
    lidar: Vec<bool>,
}

impl Active {
    /// Weighted observations whose landmark is currently in front of the camera.
    pub(crate) fn current(prob: &Problem) -> Self {
        let camera = prob
            .camera_obs
            .iter()
            .map(|o| {
                o.weight > 0.0
                    && prob.poses[o.camera]
                        .inverse_transform_point(&prob.landmarks[o.landmark].position)
                        .z
                        > crate::geometry::MIN_DEPTH
            })
            .collect();
        let lidar = prob.lidar_obs.iter().map(|o| o.weight > 0.0).collect();
        Self { camera, lidar }
    }
}

fn eval_camera(prob: &Problem, i: usize) -> Result<CameraEval, crate::geometry::GeometryError> {
    let o = &prob.camera_obs[i];
    camera_factor(
        o,
        &prob.poses[o.camera],
        &prob.landmarks[o.landmark].position,
        &prob.intrinsics,
        &camera_noise(prob),
    )
}

fn eval_lidar(prob: &Problem, i: usize) -> LidarEval {
    let o = &prob.lidar_obs[i];
    lidar_factor(
        o,
        &prob.poses[o.target],
        &prob.poses[o.source],
        &prob.extrinsic,
        prob.sigmas.lidar,
    )
}

/// Total cost. With an explicit active set, an active camera observation that
/// ends up behind its camera makes the cost infinite (`None`); without one,
/// such observations are skipped.
pub(crate) fn cost_of(prob: &Problem, active: Option<&Active>, robust: &RobustKernel) -> Option<f64> {
    let cam: Vec<Option<f64>> = (0..prob.camera_obs.len())
        .into_par_iter()
        .map(|i| {
            let o = &prob.camera_obs[i];
            let on = match active {
                Some(a) => a.camera[i],
                None => o.weight > 0.0,
            };
            if !on {
                return Some(0.0);
            }
            match eval_camera(prob, i) {
                Ok(e) => Some(o.weight * robust.rho(e.residual.norm_squared())),
                Err(_) if active.is_none() => Some(0.0),
                Err(_) => None,
            }
        })
        .collect();
    let lid: Vec<f64> = (0..prob.lidar_obs.len())
        .into_par_iter()
        .map(|i| {
            let o = &prob.lidar_obs[i];
            let on = match active {
                Some(a) => a.lidar[i],
                None => o.weight > 0.0,
            };
            if !on {
                return 0.0;
            }
            let r = super::residuals::residual_lidar(o, prob);
            o.weight * robust.rho(r * r)
        })
        .collect();
    let mut sum = 0.0;
    for c in cam {
        sum += c?;
    }
    for l in lid {
        sum += l;
    }
    Some(0.5 * sum)
}

/// Normal equations with landmarks kept separate for elimination.
struct System {
    hcc: DMatrix<f64>,
    gc: DVector<f64>,
    hll: Vec<Matrix3<f64>>,
    gl: Vec<Vector3<f64>>,
    /// Per landmark: (pose offset, H_pose,landmark) couplings.
    coupling: Vec<Vec<(usize, Matrix6x3<f64>)>>,
    observed: Vec<bool>,
}

impl System {
    fn gradient_inf_norm(&self) -> f64 {
        let gc = self.gc.amax();
        let gl = self
            .gl
            .iter()
            .zip(&self.observed)
            .filter(|(_, o)| **o)
            .map(|(g, _)| g.amax())
            .fold(0.0, f64::max);
        gc.max(gl)
    }
}

fn add_block(h: &mut DMatrix<f64>, r: usize, c: usize, m: &nalgebra::Matrix6<f64>) {
    let mut view = h.fixed_view_mut::<6, 6>(r, c);
    view += m;
}

fn build_system(prob: &Problem, layout: &Layout, active: &Active, robust: &RobustKernel) -> System {
    let dim = layout.dim();
    let nl = prob.landmarks.len();
    let mut sys = System {
        hcc: DMatrix::zeros(dim, dim),
        gc: DVector::zeros(dim),
        hll: vec![Matrix3::zeros(); nl],
        gl: vec![Vector3::zeros(); nl],
        coupling: vec![Vec::new(); nl],
        observed: vec![false; nl],
    };

    let cam: Vec<Option<CameraEval>> = (0..prob.camera_obs.len())
        .into_par_iter()
        .map(|i| if active.camera[i] { eval_camera(prob, i).ok() } else { None })
        .collect();
    for (i, e) in cam.iter().enumerate() {
        let Some(e) = e else { continue };
        let o = &prob.camera_obs[i];
        let w = o.weight * robust.weight(e.residual.norm_squared());
        let k = o.landmark;
        let jl_t = e.d_landmark.transpose();
        sys.hll[k] += w * jl_t * e.d_landmark;
        sys.gl[k] += w * jl_t * e.residual;
        sys.observed[k] = true;
        if let Some(p) = layout.pose(o.camera) {
            let jp_t = e.d_pose.transpose();
            add_block(&mut sys.hcc, p, p, &(w * jp_t * e.d_pose));
            let mut g = sys.gc.fixed_rows_mut::<6>(p);
            g += w * jp_t * e.residual;
            sys.coupling[k].push((p, w * jp_t * e.d_landmark));
        }
    }

    let lid: Vec<Option<LidarEval>> = (0..prob.lidar_obs.len())
        .into_par_iter()
        .map(|i| active.lidar[i].then(|| eval_lidar(prob, i)))
        .collect();
    for (i, e) in lid.iter().enumerate() {
        let Some(e) = e else { continue };
        let o = &prob.lidar_obs[i];
        let w = o.weight * robust.weight(e.residual * e.residual);
        let mut blocks: [(Option<usize>, nalgebra::RowVector6<f64>); 3] = [
            (layout.pose(o.target), e.d_target),
            (layout.pose(o.source), e.d_source),
            (layout.extrinsic(), e.d_extrinsic),
        ];
        blocks.sort_by_key(|b| b.0);
        for (a, ja) in blocks.iter() {
            let Some(a) = *a else { continue };
            let mut g = sys.gc.fixed_rows_mut::<6>(a);
            g += w * ja.transpose() * e.residual;
            for (b, jb) in blocks.iter() {
                let Some(b) = *b else { continue };
                add_block(&mut sys.hcc, a, b, &(w * ja.transpose() * jb));
            }
        }
    }
    sys
}

fn damp3(h: &Matrix3<f64>, lambda: f64) -> Matrix3<f64> {
    let mut out = *h;
    for i in 0..3 {
        out[(i, i)] += lambda * h[(i, i)].max(DIAG_FLOOR);
    }
    out
}

/// Solves the damped system; returns (camera step, landmark steps).
fn solve_step(sys: &System, lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
    let dim = sys.gc.len();
    let mut s = sys.hcc.clone();
    for i in 0..dim {
        s[(i, i)] += lambda * sys.hcc[(i, i)].max(DIAG_FLOOR);
    }
    let mut b = sys.gc.clone();
    let mut inverses: Vec<Option<Matrix3<f64>>> = vec![None; sys.hll.len()];
    for k in 0..sys.hll.len() {
        if !sys.observed[k] {
            continue;
        }
        let inv = damp3(&sys.hll[k], lambda).try_inverse()?;
        for (pa, wa) in &sys.coupling[k] {
            let wa_inv = wa * inv;
            let mut bseg = b.fixed_rows_mut::<6>(*pa);
            bseg -= wa_inv * sys.gl[k];
            for (pb, wb) in &sys.coupling[k] {
                let mut blk = s.fixed_view_mut::<6, 6>(*pa, *pb);
                blk -= wa_inv * wb.transpose();
            }
        }
        inverses[k] = Some(inv);
    }
    let dc = if dim == 0 {
        DVector::zeros(0)
    } else {
        s.cholesky()?.solve(&(-&b))
    };
    let dl = (0..sys.hll.len())
        .map(|k| match inverses[k] {
            Some(inv) => {
                let mut rhs = sys.gl[k];
                for (pa, wa) in &sys.coupling[k] {
                    rhs += wa.transpose() * dc.fixed_rows::<6>(*pa);
                }
                -(inv * rhs)
            }
            None => Vector3::zeros(),
        })
        .collect();
    Some((dc, dl))
}

fn apply_step(prob: &Problem, layout: &Layout, dc: &DVector<f64>, dl: &[Vector3<f64>]) -> Problem {
    let mut next = prob.clone();
    for i in 1..prob.poses.len() {
        let off = layout.pose(i).unwrap();
        let d: Vector6<f64> = dc.fixed_rows::<6>(off).into_owned();
        next.poses[i] = prob.poses[i].retract(&d);
    }
    if let Some(off) = layout.extrinsic() {
        let d: Vector6<f64> = dc.fixed_rows::<6>(off).into_owned();
        next.extrinsic = prob.extrinsic.retract(&d);
    }
    for (l, d) in next.landmarks.iter_mut().zip(dl) {
        l.position += d;
    }
    next
}

fn state_norm(prob: &Problem) -> f64 {
    let poses: f64 = prob.poses.iter().map(|p| p.translation().norm_squared() + 1.0).sum();
    let lms: f64 = prob.landmarks.iter().map(|l| l.position.norm_squared()).sum();
    (poses + lms + prob.extrinsic.translation().norm_squared() + 1.0).sqrt()
}

fn adopt(prob: &mut Problem, next: Problem) {
    prob.poses = next.poses;
    prob.landmarks = next.landmarks;
    prob.extrinsic = next.extrinsic;
}

/// Minimizes the joint cost over poses 1.., landmarks and (unless fixed) the
/// extrinsic. Observation weights are left untouched.
pub fn optimize(prob: &mut Problem, config: &SolverConfig) -> Result<SolveReport, SolverError> {
    prob.validate()?;
    // trial states are cloned; keep the clouds out of them
    let scans = prob.scans.take();
    let result = optimize_inner(prob, config);
    prob.scans = scans;
    result
}

fn optimize_inner(prob: &mut Problem, config: &SolverConfig) -> Result<SolveReport, SolverError> {
    let layout = Layout::new(prob, config.fix_extrinsic);
    let active = Active::current(prob);
    let robust = config.robust;
    let initial_cost = cost_of(prob, Some(&active), &robust).unwrap_or(f64::NAN);
    if !initial_cost.is_finite() {
        return Err(SolverError::Diverged {
            iteration: 0,
            cost: initial_cost,
        });
    }
    let mut cost = initial_cost;
    let mut lambda = config.initial_lambda;
    let mut status = ConvergenceStatus::MaxIterations;
    let mut iterations = 0;

    'outer: while iterations < config.max_iterations {
        let sys = build_system(prob, &layout, &active, &robust);
        if sys.gradient_inf_norm() < config.gradient_tolerance {
            status = ConvergenceStatus::Converged;
            break;
        }
        iterations += 1;
        loop {
            let Some((dc, dl)) = solve_step(&sys, lambda) else {
                lambda *= 10.0;
                if lambda > MAX_LAMBDA {
                    status = ConvergenceStatus::Converged;
                    break 'outer;
                }
                continue;
            };
            let step2 = dc.norm_squared() + dl.iter().map(|d| d.norm_squared()).sum::<f64>();
            if step2.sqrt() <= config.step_tolerance * (state_norm(prob) + config.step_tolerance) {
                status = ConvergenceStatus::Converged;
                break 'outer;
            }
            let next = apply_step(prob, &layout, &dc, &dl);
            match cost_of(&next, Some(&active), &robust) {
                Some(c) if c.is_finite() && c < cost => {
                    let decrease = (cost - c) / cost;
                    adopt(prob, next);
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-15);
                    if decrease < config.relative_cost_tolerance {
                        status = ConvergenceStatus::Converged;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > MAX_LAMBDA {
                        // no descent direction left at machine precision
                        status = ConvergenceStatus::Converged;
                        break 'outer;
                    }
                }
            }
        }
    }
    debug!("LM finished after {iterations} iterations: cost {initial_cost:.6e} -> {cost:.6e} ({status:?})");

    let unconstrained = unconstrained_parameters(prob, config);
    if !unconstrained.is_empty() && config.singular == SingularPolicy::Error {
        return Err(SolverError::SingularNormalEquations {
            blocks: block_names(&unconstrained),
        });
    }
    let (gc, gl) = prob.gated_counts();
    Ok(SolveReport {
        initial_cost,
        final_cost: cost,
        iterations,
        outliers: (gc, gl),
        reassociation_rounds: 0,
        status,
        unconstrained,
        camera_observations: prob.camera_obs.len(),
        lidar_observations: prob.lidar_obs.len(),
    })
}

/// `extrinsic.translation.y` -> `extrinsic.translation`, deduplicated.
pub(crate) fn block_names(params: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in params {
        let block = p.rsplit_once('.').map(|(b, _)| b).unwrap_or(p).to_string();
        if !out.contains(&block) {
            out.push(block);
        }
    }
    out
}

/// Parameters spanning the null space of the undamped reduced normal
/// equations at the current state, by name (e.g. `extrinsic.translation.y`,
/// `pose[2].rotation.z`, `landmark[5]`).
pub fn unconstrained_parameters(prob: &Problem, config: &SolverConfig) -> Vec<String> {
    let layout = Layout::new(prob, config.fix_extrinsic);
    let active = Active::current(prob);
    let sys = build_system(prob, &layout, &active, &config.robust);
    let mut names = Vec::new();

    let dim = layout.dim();
    let mut s = sys.hcc.clone();
    for k in 0..sys.hll.len() {
        if !sys.observed[k] {
            continue;
        }
        let eig = SymmetricEigen::new(sys.hll[k]);
        let max = eig.eigenvalues.amax();
        if max <= 0.0 || eig.eigenvalues.min() <= 1e-12 * max {
            names.push(format!("landmark[{k}]"));
            continue;
        }
        let inv = sys.hll[k].try_inverse().unwrap_or_else(Matrix3::zeros);
        for (pa, wa) in &sys.coupling[k] {
            for (pb, wb) in &sys.coupling[k] {
                let mut blk = s.fixed_view_mut::<6, 6>(*pa, *pb);
                blk -= wa * inv * wb.transpose();
            }
        }
    }
    if dim == 0 {
        return names;
    }

    let diag: Vec<f64> = (0..dim).map(|i| s[(i, i)]).collect();
    let max_diag = diag.iter().cloned().fold(0.0, f64::max);
    let mut flagged = vec![false; dim];
    let keep: Vec<usize> = (0..dim)
        .filter(|&i| {
            let ok = diag[i] > 1e-14 * max_diag.max(f64::MIN_POSITIVE);
            flagged[i] = !ok;
            ok
        })
        .collect();
    if !keep.is_empty() {
        let m = keep.len();
        let scaled = DMatrix::from_fn(m, m, |a, b| {
            let (i, j) = (keep[a], keep[b]);
            s[(i, j)] / (diag[i] * diag[j]).sqrt()
        });
        let eig = SymmetricEigen::new(scaled);
        let max_eig = eig.eigenvalues.amax();
        for (c, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev <= 1e-9 * max_eig {
                let v = eig.eigenvectors.column(c);
                for a in 0..m {
                    if v[a].abs() >= 0.3 {
                        flagged[keep[a]] = true;
                    }
                }
            }
        }
    }
    names.extend((0..dim).filter(|&i| flagged[i]).map(|i| layout.name(i)));
    names
}
