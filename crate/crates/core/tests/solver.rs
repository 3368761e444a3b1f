//! Residuals, Jacobians and the solver on synthetic scenes.

use lidarcam::correspond::LidarScans;
use lidarcam::geometry::{CameraIntrinsics, DepthKind, Landmark, Pose};
use lidarcam::graph::{Adjacency, CameraObservation, GraphError, LidarObservation};
use lidarcam::pipeline::{prepare_problem, PrepareConfig, Prepared, StationData};
use lidarcam::solver::residuals::{camera_factor, lidar_factor, CameraNoise};
use lidarcam::solver::{
    optimize, residual_depth, residual_feature, residual_lidar, solve_joint, total_cost, Problem, Sigmas,
    SingularPolicy, SolverConfig, SolverError,
};
use lidarcam::synth::{generate, perturb_pose, NoiseSpec, OutlierSpec, PoseGenerator, SceneSpec, SyntheticScene};
use lidarcam::{CorrespondConfig, Error};
use nalgebra::{Vector2, Vector3, Vector6};
use proptest::prelude::*;

fn prepare(scene: SyntheticScene, te0: &Pose, seed: u64) -> Result<Prepared, Error> {
    let data = StationData {
        features: scene.features,
        clouds: scene.clouds,
        rough: scene.rough,
    };
    prepare_problem(data, &scene.intrinsics, te0, &PrepareConfig::default(), seed)
}

fn small_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        landmarks: 150,
        lidar_samples: 6000,
        seed,
        ..Default::default()
    }
}

fn noisy() -> NoiseSpec {
    NoiseSpec {
        pixel: 1.0,
        depth_multiplier: 1.0,
        range: 0.01,
        descriptor: 0.02,
    }
}

fn single_problem(pose: Pose, landmark: Vector3<f64>, obs: CameraObservation, kind: DepthKind) -> Problem {
    Problem {
        poses: vec![Pose::identity(), pose],
        landmarks: vec![Landmark { id: 0, position: landmark }],
        extrinsic: Pose::identity(),
        camera_obs: vec![obs],
        lidar_obs: vec![],
        intrinsics: CameraIntrinsics::new(900.0, 880.0, 400.0, 300.0, 0.3).unwrap(),
        sigmas: Sigmas {
            pixel: 0.8,
            depth: None,
            lidar: 0.03,
        },
        depth_kind: kind,
        scans: None,
    }
}

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose(r: f64, t: f64) -> impl Strategy<Value = Pose> {
    (vec3(r), vec3(t)).prop_map(|(w, t)| Pose::from_axis_angle(w, t))
}

fn unit(i: usize) -> Vector6<f64> {
    let mut d = Vector6::zeros();
    d[i] = 1.0;
    d
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-5 * scale.max(1.0)
}

const H: f64 = 1e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn camera_jacobians_match_finite_differences(
        cam in pose(0.5, 1.0),
        local in (-0.5..0.5f64, -0.5..0.5f64, 1.0..6.0f64),
        noise in (vec3(2.0), -0.05..0.05f64),
        zdepth in any::<bool>(),
    ) {
        let kind = if zdepth { DepthKind::ZDepth } else { DepthKind::Range };
        let pc = Vector3::new(local.0, local.1, local.2);
        let landmark = cam.transform_point(&pc);
        let k = CameraIntrinsics::new(900.0, 880.0, 400.0, 300.0, 0.3).unwrap();
        let obs = CameraObservation {
            camera: 1,
            landmark: 0,
            pixel: k.project(&pc).unwrap() + Vector2::new(noise.0.x, noise.0.y),
            depth: kind.measure(&pc) + noise.1,
            weight: 1.0,
        };
        let prob = single_problem(cam, landmark, obs, kind);
        let cn = CameraNoise { pixel_sigma: 0.8, depth_sigma: None, depth_kind: kind };
        let eval = camera_factor(&obs, &cam, &landmark, &prob.intrinsics, &cn).unwrap();
        let residual = |p: &Problem| {
            let f = residual_feature(&obs, p).unwrap();
            Vector3::new(f.x, f.y, residual_depth(&obs, p).unwrap())
        };
        prop_assert!((residual(&prob) - eval.residual).norm() < 1e-9);
        let scale = eval.d_pose.amax().max(eval.d_landmark.amax());
        for c in 0..6 {
            let (mut plus, mut minus) = (prob.clone(), prob.clone());
            plus.poses[1] = cam.retract(&(unit(c) * H));
            minus.poses[1] = cam.retract(&(unit(c) * -H));
            let fd = (residual(&plus) - residual(&minus)) / (2.0 * H);
            for r in 0..3 {
                prop_assert!(close(eval.d_pose[(r, c)], fd[r], scale), "d_pose[{r},{c}] {} vs {}", eval.d_pose[(r, c)], fd[r]);
            }
        }
        for c in 0..3 {
            let (mut plus, mut minus) = (prob.clone(), prob.clone());
            plus.landmarks[0].position[c] += H;
            minus.landmarks[0].position[c] -= H;
            let fd = (residual(&plus) - residual(&minus)) / (2.0 * H);
            for r in 0..3 {
                prop_assert!(close(eval.d_landmark[(r, c)], fd[r], scale));
            }
        }
    }

    #[test]
    fn lidar_jacobians_match_finite_differences(
        ti in pose(1.0, 2.0),
        tj in pose(1.0, 2.0),
        te in pose(1.0, 0.3),
        point in vec3(5.0),
        neighbor in vec3(5.0),
        normal in vec3(1.0).prop_filter("non-zero", |n| n.norm() > 0.1),
    ) {
        let obs = LidarObservation { target: 1, source: 2, point, neighbor, normal: normal.normalize(), weight: 1.0 };
        let mut prob = single_problem(Pose::identity(), Vector3::z(), CameraObservation {
            camera: 0, landmark: 0, pixel: Vector2::zeros(), depth: 1.0, weight: 0.0,
        }, DepthKind::Range);
        prob.poses = vec![Pose::identity(), ti, tj];
        prob.extrinsic = te;
        let eval = lidar_factor(&obs, &ti, &tj, &te, prob.sigmas.lidar);
        prop_assert!((residual_lidar(&obs, &prob) - eval.residual).abs() < 1e-9 * eval.residual.abs().max(1.0));
        let scale = eval.d_target.amax().max(eval.d_source.amax()).max(eval.d_extrinsic.amax());
        let fd = |edit: &dyn Fn(&mut Problem, f64)| {
            let (mut plus, mut minus) = (prob.clone(), prob.clone());
            edit(&mut plus, H);
            edit(&mut minus, -H);
            (residual_lidar(&obs, &plus) - residual_lidar(&obs, &minus)) / (2.0 * H)
        };
        for c in 0..6 {
            let t = fd(&|p: &mut Problem, h: f64| p.poses[1] = ti.retract(&(unit(c) * h)));
            let s = fd(&|p: &mut Problem, h: f64| p.poses[2] = tj.retract(&(unit(c) * h)));
            let e = fd(&|p: &mut Problem, h: f64| p.extrinsic = te.retract(&(unit(c) * h)));
            prop_assert!(close(eval.d_target[c], t, scale), "target {c}: {} vs {t}", eval.d_target[c]);
            prop_assert!(close(eval.d_source[c], s, scale), "source {c}: {} vs {s}", eval.d_source[c]);
            prop_assert!(close(eval.d_extrinsic[c], e, scale), "extrinsic {c}: {} vs {e}", eval.d_extrinsic[c]);
        }
    }

    #[test]
    fn sliding_the_neighbor_in_its_plane_keeps_the_residual(
        ti in pose(1.0, 2.0), tj in pose(1.0, 2.0), te in pose(1.0, 0.3),
        point in vec3(5.0), offset in vec3(1.0), slide in vec3(3.0),
    ) {
        let rel = lidarcam::geometry::relative_cloud_transform(&ti, &tj, &te);
        let normal = offset.normalize();
        let neighbor = rel.transform_point(&point);
        let tangent = slide - normal * normal.dot(&slide);
        let mut prob = single_problem(Pose::identity(), Vector3::z(), CameraObservation {
            camera: 0, landmark: 0, pixel: Vector2::zeros(), depth: 1.0, weight: 0.0,
        }, DepthKind::Range);
        prob.poses = vec![Pose::identity(), ti, tj];
        prob.extrinsic = te;
        let at = |q: Vector3<f64>| {
            residual_lidar(&LidarObservation { target: 1, source: 2, point, neighbor: q, normal, weight: 1.0 }, &prob)
        };
        prop_assert!(at(neighbor).abs() < 1e-6);
        prop_assert!(at(neighbor + tangent).abs() < 1e-6);
        prop_assert!((at(neighbor + normal * 0.01) + 0.01 / prob.sigmas.lidar).abs() < 1e-6);
    }
}

#[test]
fn doubling_depth_sigma_quarters_the_depth_cost() {
    let pc = Vector3::new(0.2, -0.1, 3.0);
    let obs = CameraObservation {
        camera: 0,
        landmark: 0,
        pixel: Vector2::new(400.0 + 900.0 * 0.2 / 3.0, 300.0 - 880.0 * 0.1 / 3.0),
        depth: pc.norm() + 0.02,
        weight: 1.0,
    };
    let mut p = single_problem(Pose::identity(), pc, obs, DepthKind::Range);
    p.sigmas.depth = Some(0.01);
    let c1 = total_cost(&p);
    p.sigmas.depth = Some(0.02);
    let c2 = total_cost(&p);
    assert!((c1 / c2 - 4.0).abs() < 1e-9, "{c1} / {c2}");
    assert!((c1 - 0.5 * 2.0f64.powi(2)).abs() < 1e-9);
}

#[test]
fn noise_free_observations_vanish_at_the_truth() {
    let scene = generate(&small_spec(4)).unwrap();
    let truth = &scene.truth;
    let mut camera_obs = Vec::new();
    for (i, fs) in scene.features.iter().enumerate() {
        for (f, &l) in fs.iter().zip(&truth.feature_landmarks[i]) {
            camera_obs.push(CameraObservation {
                camera: i,
                landmark: l,
                pixel: f.pixel,
                depth: f.depth,
                weight: 1.0,
            });
        }
    }
    let n = truth.poses.len();
    let scans = LidarScans::new(scene.clouds, Adjacency::fully_connected(n), CorrespondConfig::default(), 1).unwrap();
    let lidar_obs = scans.extract(&truth.poses, &truth.extrinsic).unwrap();
    assert!(camera_obs.len() > 400 && lidar_obs.len() > 10_000);
    let prob = Problem {
        poses: truth.poses.clone(),
        landmarks: truth.landmarks.clone(),
        extrinsic: truth.extrinsic,
        camera_obs,
        lidar_obs,
        intrinsics: scene.intrinsics,
        sigmas: Sigmas::default(),
        depth_kind: DepthKind::Range,
        scans: None,
    };
    for o in &prob.camera_obs {
        assert!(residual_feature(o, &prob).unwrap().norm() < 1e-6);
        assert!(residual_depth(o, &prob).unwrap().abs() < 1e-6);
    }
    for o in &prob.lidar_obs {
        assert!(residual_lidar(o, &prob).abs() < 1e-9, "{o:?}");
    }
}

#[test]
fn noise_free_scene_is_recovered() {
    let spec = small_spec(2);
    let scene = generate(&spec).unwrap();
    let truth = scene.truth.clone();
    let te0 = perturb_pose(&truth.extrinsic, 0.03, 0.03, 9);
    let mut p = prepare(scene, &te0, 2).unwrap().problem;
    let report = solve_joint(&mut p, &SolverConfig::default()).unwrap();
    let (dt, dr) = p.extrinsic.distance(&truth.extrinsic);
    assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
    assert!(report.final_cost < 1e-12);
    assert!(report.final_cost <= report.initial_cost);
    assert_eq!(report.outliers, (0, 0));
}

#[test]
fn cost_never_increases_with_more_iterations() {
    let scene = generate(&SceneSpec {
        noise: noisy(),
        ..small_spec(5)
    })
    .unwrap();
    let te0 = perturb_pose(&scene.truth.extrinsic, 0.03, 0.03, 5);
    let base = prepare(scene, &te0, 5).unwrap().problem;
    let start = total_cost(&base);
    let mut last = start;
    for iterations in 1..8 {
        let mut p = base.clone();
        optimize(
            &mut p,
            &SolverConfig {
                max_iterations: iterations,
                ..Default::default()
            },
        )
        .unwrap();
        let c = total_cost(&p);
        assert!(c <= last * (1.0 + 1e-12), "iteration {iterations}: {c} > {last}");
        last = c;
    }
    assert!(last < start);
}

#[test]
fn solution_is_independent_of_the_world_frame() {
    let spec = SceneSpec {
        noise: noisy(),
        ..small_spec(7)
    };
    let raw = spec.poses.poses(spec.stations).unwrap();
    let g = Pose::from_axis_angle(Vector3::new(0.4, -1.1, 0.3), Vector3::new(12.0, -3.0, 5.5));
    let moved = SceneSpec {
        poses: PoseGenerator::Custom {
            poses: raw.iter().map(|p| g.compose(p)).collect(),
        },
        surfaces: spec.surfaces.iter().map(|s| s.transformed(&g)).collect(),
        ..spec.clone()
    };
    let solve = |spec: &SceneSpec| {
        let scene = generate(spec).unwrap();
        let te0 = perturb_pose(&scene.truth.extrinsic, 0.03, 0.03, 3);
        let mut p = prepare(scene, &te0, 3).unwrap().problem;
        let r = solve_joint(&mut p, &SolverConfig::default()).unwrap();
        (r.final_cost, p.extrinsic)
    };
    let (ca, ea) = solve(&spec);
    let (cb, eb) = solve(&moved);
    assert!((ca - cb).abs() <= 1e-9 * ca.max(1.0), "{ca} vs {cb}");
    let (dt, dr) = ea.distance(&eb);
    assert!(dt < 1e-9 && dr < 1e-9, "{dt} {dr}");
}

fn translation_only() -> SceneSpec {
    SceneSpec {
        stations: 3,
        poses: PoseGenerator::Line {
            start: Vector3::new(-0.8, 0.3, -2.5),
            step: Vector3::new(0.8, 0.0, 0.0),
            rotation: Vector3::zeros(),
        },
        ..small_spec(1)
    }
}

#[test]
fn pure_translation_leaves_the_extrinsic_translation_unconstrained() {
    let scene = generate(&translation_only()).unwrap();
    let te0 = scene.truth.extrinsic;
    let base = prepare(scene, &te0, 1).unwrap().problem;

    let mut p = base.clone();
    let err = solve_joint(&mut p, &SolverConfig::default()).unwrap_err();
    let SolverError::SingularNormalEquations { blocks } = err else {
        panic!("unexpected {err:?}");
    };
    assert!(blocks.iter().any(|b| b.starts_with("extrinsic.translation")), "{blocks:?}");

    let mut p = base;
    let report = solve_joint(
        &mut p,
        &SolverConfig {
            singular: SingularPolicy::Report,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(
        report.unconstrained.iter().any(|b| b.starts_with("extrinsic.translation")),
        "{:?}",
        report.unconstrained
    );
    // rotation about the direction of travel is unobservable too
    let rotations: Vec<&String> = report.unconstrained.iter().filter(|b| b.starts_with("extrinsic.rotation")).collect();
    assert_eq!(rotations, ["extrinsic.rotation.x"]);
}

#[test]
fn disconnected_stations_are_reported() {
    let mut scene = generate(&SceneSpec {
        stations: 4,
        ..small_spec(3)
    })
    .unwrap();
    scene.features[3].clear();
    scene.rough.retain(|r| r.target != 3 && r.source != 3);
    let te0 = scene.truth.extrinsic;
    let err = prepare(scene, &te0, 3).unwrap_err();
    match err {
        Error::Graph(GraphError::Disconnected { components }) => {
            assert_eq!(components, vec![vec![0, 1, 2], vec![3]]);
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn gating_only_removes_observations() {
    let scene = generate(&SceneSpec {
        noise: NoiseSpec {
            pixel: 0.3,
            depth_multiplier: 0.3,
            ..noisy()
        },
        outliers: OutlierSpec {
            feature_fraction: 0.05,
            lidar_fraction: 0.05,
            ..Default::default()
        },
        ..small_spec(8)
    })
    .unwrap();
    let te0 = scene.truth.extrinsic;
    let mut p = prepare(scene, &te0, 8).unwrap().problem;
    let before: Vec<f64> = p.camera_obs.iter().map(|o| o.weight).collect();
    let report = solve_joint(
        &mut p,
        &SolverConfig {
            reassociation_rounds: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.outliers.0 > 0);
    for (o, w) in p.camera_obs.iter().zip(before) {
        assert!(o.weight == 0.0 || o.weight == w);
    }
    assert_eq!(p.gated_counts(), report.outliers);
}

#[test]
fn perturbation_statistics_match_the_requested_sigmas() {
    let base = Pose::from_axis_angle(Vector3::new(0.3, 0.1, -0.2), Vector3::new(1.0, 2.0, 3.0));
    let (st, sr) = (0.02, 0.01);
    let n = 10_000;
    let mut sum = Vector3::zeros();
    let mut sq = Vector3::zeros();
    let mut angle_sq = 0.0;
    for seed in 0..n {
        let p = perturb_pose(&base, st, sr, seed);
        let d = p.translation() - base.translation();
        sum += d;
        sq += d.component_mul(&d);
        angle_sq += p.rotation().angle_to(base.rotation()).powi(2);
    }
    let n = n as f64;
    for a in 0..3 {
        let mean = sum[a] / n;
        let std = (sq[a] / n - mean * mean).sqrt();
        assert!(mean.abs() < 4.0 * st / n.sqrt(), "axis {a} mean {mean}");
        assert!((std / st - 1.0).abs() < 0.05, "axis {a} std {std}");
    }
    let rot_std = (angle_sq / n).sqrt();
    assert!((rot_std / sr - 1.0).abs() < 0.05, "rotation std {rot_std}");
}

#[test]
fn scale_is_fixed_by_stereo_depth() {
    let scene = generate(&small_spec(6)).unwrap();
    let truth = scene.truth.clone();
    let mut p = prepare(scene, &truth.extrinsic, 6).unwrap().problem;
    // start from a trajectory and structure that are 5% too large
    p.poses = truth
        .poses
        .iter()
        .map(|t| Pose::new(*t.rotation(), t.translation() * 1.05))
        .collect();
    for l in &mut p.landmarks {
        l.position *= 1.05;
    }
    solve_joint(&mut p, &SolverConfig::default()).unwrap();
    for (a, b) in p.poses.iter().zip(&truth.poses) {
        let (dt, dr) = a.distance(b);
        assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
    }
}
