//! Association, correspondence search, observability and scene generation.

use std::collections::{HashMap, HashSet};

use lidarcam::correspond::KdTree;
use lidarcam::geometry::{DepthKind, Pose};
use lidarcam::graph::{associate_features, AssociationConfig};
use lidarcam::observability::{
    check_uniqueness, flatness_report, motion_pairs, sweep_all, sweep_extrinsic, Flatness, MotionPair,
    SweepDimension, SweepSpec, DEFAULT_ANGLE_TOL,
};
use lidarcam::pipeline::{prepare_problem, PrepareConfig, StationData};
use lidarcam::solver::total_cost;
use lidarcam::synth::{generate, NoiseSpec, PoseGenerator, SceneSpec};
use lidarcam::Problem;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(seed: u64) -> SceneSpec {
    SceneSpec {
        landmarks: 150,
        lidar_samples: 6000,
        seed,
        ..Default::default()
    }
}

#[test]
fn kdtree_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut point = || Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0));
    let points: Vec<Vector3<f64>> = (0..10_000).map(|_| point()).collect();
    let queries: Vec<Vector3<f64>> = (0..1000).map(|_| point() * 1.2).collect();
    let tree = KdTree::build(&points);
    for q in &queries {
        let mut d2: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, (p - q).norm_squared())).collect();
        d2.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let (i, d) = tree.nearest(q).unwrap();
        assert_eq!(d, d2[0].1);
        assert_eq!(points[i], points[d2[0].0]);
        let k = tree.k_nearest(q, 8);
        let got: Vec<f64> = k.iter().map(|x| x.1).collect();
        let want: Vec<f64> = d2[..8].iter().map(|x| x.1).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn noise_free_association_recovers_the_landmarks() {
    let scene = generate(&spec(3)).unwrap();
    let assoc = associate_features(&scene.features, &scene.intrinsics, &AssociationConfig::default()).unwrap();

    let mut obs_per_landmark: HashMap<usize, Vec<usize>> = HashMap::new();
    for o in &assoc.observations {
        obs_per_landmark.entry(o.landmark).or_default().push(o.camera);
    }
    for (k, l) in assoc.landmarks.iter().enumerate() {
        assert_eq!(l.id, k);
        let cams = &obs_per_landmark[&k];
        assert!(cams.len() >= 2);
        let unique: HashSet<_> = cams.iter().collect();
        assert_eq!(unique.len(), cams.len(), "landmark {k} seen twice by one station");
    }

    // every association label maps to exactly one true landmark
    let mut truth_of: HashMap<usize, usize> = HashMap::new();
    for (i, labels) in assoc.labels.iter().enumerate() {
        for (f, label) in labels.iter().enumerate() {
            if let Some(k) = label {
                let t = scene.truth.feature_landmarks[i][f];
                assert_eq!(*truth_of.entry(*k).or_insert(t), t);
            }
        }
    }
    let distinct: HashSet<_> = truth_of.values().collect();
    assert_eq!(distinct.len(), assoc.landmarks.len());

    let again = associate_features(&scene.features, &scene.intrinsics, &AssociationConfig::default()).unwrap();
    assert_eq!(assoc, again);
}

#[test]
fn anchored_landmarks_land_on_the_truth() {
    let scene = generate(&spec(5)).unwrap();
    let assoc = associate_features(&scene.features, &scene.intrinsics, &AssociationConfig::default()).unwrap();
    let world = assoc.landmarks_in_world(&scene.truth.poses).unwrap();
    let first_feature: HashMap<usize, usize> = assoc
        .labels
        .iter()
        .enumerate()
        .flat_map(|(i, ls)| ls.iter().enumerate().filter_map(move |(f, l)| l.map(|k| (k, (i, f)))))
        .map(|(k, (i, f))| (k, scene.truth.feature_landmarks[i][f]))
        .collect();
    for l in &world {
        let t = &scene.truth.landmarks[first_feature[&l.id]];
        assert!((l.position - t.position).norm() < 1e-9);
    }
}

#[test]
fn generation_is_deterministic() {
    let a = generate(&spec(11)).unwrap();
    let b = generate(&spec(11)).unwrap();
    let c = generate(&spec(12)).unwrap();
    assert_eq!(a.features, b.features);
    assert_eq!(a.clouds, b.clouds);
    assert_eq!(a.rough, b.rough);
    assert_eq!(a.truth, b.truth);
    assert_ne!(a.truth.landmarks, c.truth.landmarks);
}

#[test]
fn first_station_defines_the_world() {
    let scene = generate(&spec(1)).unwrap();
    let (dt, dr) = scene.truth.poses[0].distance(&Pose::identity());
    assert!(dt == 0.0 && dr == 0.0);
    assert!(scene.clouds.iter().all(|c| c.normals.as_ref().is_some_and(|n| n.len() == c.len())));
}

#[test]
fn invalid_specs_name_the_field() {
    let cases: [(SceneSpec, &str); 3] = [
        (SceneSpec { stations: 0, ..spec(0) }, "stations"),
        (SceneSpec { keep_probability: 1.5, ..spec(0) }, "keep_probability"),
        (SceneSpec { surfaces: vec![], ..spec(0) }, "surfaces"),
    ];
    for (s, field) in cases {
        let e = generate(&s).unwrap_err().to_string();
        assert!(e.contains(field), "{e}");
    }
}

fn solved_at_truth(poses: PoseGenerator, stations: usize, noise: NoiseSpec) -> Problem {
    let scene = generate(&SceneSpec {
        stations,
        poses,
        noise,
        ..spec(2)
    })
    .unwrap();
    let truth = scene.truth.clone();
    let data = StationData {
        features: scene.features,
        clouds: scene.clouds,
        rough: scene.rough,
    };
    let prep = prepare_problem(data, &scene.intrinsics, &truth.extrinsic, &PrepareConfig::default(), 2).unwrap();
    let mut p = prep.problem;
    p.poses = truth.poses.clone();
    p.landmarks = prep.association.landmarks_in_world(&truth.poses).unwrap();
    p.lidar_obs = p.scans.as_ref().unwrap().extract(&p.poses, &p.extrinsic).unwrap();
    p
}

#[test]
fn translation_sweeps_are_symmetric_and_centred() {
    let p = solved_at_truth(SceneSpec::default().poses, 5, NoiseSpec::default());
    let sweeps = sweep_all(&p, &SweepSpec::default()).unwrap();
    let center = total_cost(&p);
    for s in &sweeps {
        let n = s.offsets.len();
        assert_eq!(s.center_cost(), center);
        for k in 0..n {
            assert!((s.offsets[k] + s.offsets[n - 1 - k]).abs() < 1e-15);
        }
        if !s.dimension.is_rotation() {
            // the cost is exactly quadratic in a translation offset with its minimum at zero
            let scale = s.costs.iter().cloned().fold(0.0, f64::max);
            for k in 0..n {
                assert!((s.costs[k] - s.costs[n - 1 - k]).abs() <= 1e-9 * scale, "{}", s.dimension);
            }
        }
    }
    assert!(flatness_report(&sweeps, 1e-6).iter().all(|(_, f)| *f == Flatness::Constrained));
}

#[test]
fn unidentifiable_scenes_have_flat_sweeps() {
    let p = solved_at_truth(
        PoseGenerator::Line {
            start: Vector3::new(-0.8, 0.3, -2.5),
            step: Vector3::new(0.8, 0.0, 0.0),
            rotation: Vector3::zeros(),
        },
        3,
        NoiseSpec {
            pixel: 1.0,
            depth_multiplier: 1.0,
            range: 0.01,
            descriptor: 0.02,
        },
    );
    assert!(!check_uniqueness(&motion_pairs(&p.poses, &p.extrinsic), DEFAULT_ANGLE_TOL).unique);
    let sweeps = sweep_all(&p, &SweepSpec::default()).unwrap();
    let flat: Vec<SweepDimension> = flatness_report(&sweeps, 1e-6)
        .into_iter()
        .filter(|(_, f)| *f == Flatness::Flat)
        .map(|(d, _)| d)
        .collect();
    assert!(flat.contains(&SweepDimension::X) && flat.contains(&SweepDimension::Y) && flat.contains(&SweepDimension::Z));
}

#[test]
fn sweep_rejects_bad_grids() {
    let p = solved_at_truth(SceneSpec::default().poses, 3, NoiseSpec::default());
    assert!(sweep_extrinsic(&p, SweepDimension::X, 0.1, 10).is_err());
    assert!(sweep_extrinsic(&p, SweepDimension::X, 0.0, 11).is_err());
    assert!(sweep_extrinsic(&p, SweepDimension::X, f64::NAN, 11).is_err());
}

fn motion() -> impl Strategy<Value = MotionPair> {
    (
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
        0usize..4,
    )
        .prop_map(|(w, t, kind)| {
            let w = Vector3::new(w.0, w.1, w.2);
            // mix pure translations and shared axes in with general motions
            let w = match kind {
                0 => Vector3::zeros(),
                1 => Vector3::z() * w.norm(),
                _ => w,
            };
            let tc = Pose::from_axis_angle(w, Vector3::new(t.0, t.1, t.2));
            MotionPair { tc, th: tc }
        })
}

proptest! {
    #[test]
    fn uniqueness_ignores_pair_order(pairs in proptest::collection::vec(motion(), 0..7), seed in any::<u64>()) {
        let mut shuffled = pairs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = check_uniqueness(&pairs, DEFAULT_ANGLE_TOL);
        let b = check_uniqueness(&shuffled, DEFAULT_ANGLE_TOL);
        prop_assert_eq!(a.unique, b.unique);
    }
}

#[test]
fn depth_kinds_agree_on_landmarks() {
    for kind in [DepthKind::Range, DepthKind::ZDepth] {
        let scene = generate(&SceneSpec {
            depth_kind: kind,
            ..spec(6)
        })
        .unwrap();
        let cfg = AssociationConfig {
            depth_kind: kind,
            ..Default::default()
        };
        let assoc = associate_features(&scene.features, &scene.intrinsics, &cfg).unwrap();
        let world = assoc.landmarks_in_world(&scene.truth.poses).unwrap();
        let nearest = |p: &Vector3<f64>| {
            scene
                .truth
                .landmarks
                .iter()
                .map(|l| (l.position - p).norm())
                .fold(f64::INFINITY, f64::min)
        };
        assert!(world.iter().all(|l| nearest(&l.position) < 1e-9));
    }
}
