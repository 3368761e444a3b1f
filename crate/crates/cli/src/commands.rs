//! Subcommand implementations. Each stage reads and writes files only.

use std::fs;
use std::path::{Path, PathBuf};

use lidarcam::correspond::{estimate_normals, PointCloud};
use lidarcam::evaluate::{distance_map, icp_point_to_plane, write_histogram_csv};
use lidarcam::graph::Feature;
use lidarcam::io::{read_json, read_ply, write_json, write_ply, CloudTransform, PlyFormat};
use lidarcam::mapping::{
    assemble_model, fill_holes, project_lidar_depth, read_depth_map, remove_outliers, write_depth_map,
};
use lidarcam::observability::{
    check_uniqueness, flatness_report, motion_pairs, sweep_all, write_sweep_csv, DEFAULT_ANGLE_TOL,
};
use lidarcam::pipeline::{prepare_problem, StationData};
use lidarcam::solver::{solve_joint, Problem, ProblemState};
use lidarcam::synth::{corrupt_depth, displace_pose, generate, render_depth, surface_cloud, StereoDefects};
use log::{info, warn};
use serde::Serialize;

use crate::config::{CameraFile, RunConfig, SynthConfig};
use crate::CliError;

pub const STATE_FILE: &str = "state.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn station_file(prefix: &str, i: usize, ext: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_{i}.{ext}"))
}

pub fn synth(cfg: &SynthConfig, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec = cfg.scene.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    let scene = generate(&spec)?;
    create_dir(out)?;
    let n = scene.features.len();

    let camera = CameraFile {
        intrinsics: scene.intrinsics,
        width: scene.width,
        height: scene.height,
        depth_kind: spec.depth_kind,
    };
    write_json(out.join("camera.json"), &camera)?;
    let mut run = RunConfig::default();
    for i in 0..n {
        let f = station_file("features", i, "json");
        write_json(out.join(&f), &scene.features[i])?;
        run.features.push(f);
        let c = station_file("cloud", i, "ply");
        write_ply(out.join(&c), &scene.clouds[i], PlyFormat::BinaryLittleEndian)?;
        run.clouds.push(c);
    }
    write_json(out.join("rough.json"), &scene.rough)?;
    write_json(out.join("truth.json"), &scene.truth)?;

    if let Some(defects) = &cfg.stereo {
        for (i, pose) in scene.truth.poses.iter().enumerate() {
            let clean = render_depth(&scene.truth.surfaces, pose, &scene.intrinsics, scene.width, scene.height);
            let d = StereoDefects {
                seed: defects.seed.wrapping_add(spec.seed).wrapping_add(i as u64),
                ..*defects
            };
            let (map, _) = corrupt_depth(&clean, &d);
            let f = station_file("depth", i, "dmap");
            write_depth_map(out.join(&f), &map)?;
            run.depth_maps.push(f);
        }
    }
    if cfg.truth_model_points > 0 {
        let model = surface_cloud(&scene.truth.surfaces, cfg.truth_model_points, spec.seed);
        write_ply(out.join("truth_model.ply"), &model, PlyFormat::BinaryLittleEndian)?;
        run.truth_model = Some(PathBuf::from("truth_model.ply"));
    }

    let e = cfg.initial_extrinsic_error;
    run.initial_extrinsic = displace_pose(
        &scene.truth.extrinsic,
        e.translation,
        e.rotation_deg.to_radians(),
        spec.seed.wrapping_add(11),
    );
    run.seed = spec.seed;
    write_json(out.join("config.json"), &run)?;
    info!("wrote {n} stations to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct UniquenessReport<'a> {
    unique: bool,
    reasons: &'a [String],
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let camera: CameraFile = read_json(&cfg.camera)?;
    let mut features: Vec<Vec<Feature>> = Vec::with_capacity(cfg.features.len());
    for f in &cfg.features {
        features.push(read_json(f)?);
    }
    let mut clouds = Vec::with_capacity(cfg.clouds.len());
    for c in &cfg.clouds {
        clouds.push(read_ply(c)?);
    }
    let rough: Vec<CloudTransform> = read_json(&cfg.rough)?;

    let mut prepare = cfg.prepare.clone();
    prepare.association.depth_kind = camera.depth_kind;
    let data = StationData { features, clouds, rough };
    let prepared = prepare_problem(data, &camera.intrinsics, &cfg.initial_extrinsic, &prepare, cfg.seed)?;
    let mut problem = prepared.problem;
    info!(
        "{} landmarks, {} camera and {} LiDAR observations",
        problem.landmarks.len(),
        problem.camera_obs.len(),
        problem.lidar_obs.len()
    );
    let report = solve_joint(&mut problem, &cfg.solver)?;
    if !report.unconstrained.is_empty() {
        warn!("unconstrained parameters: {}", report.unconstrained.join(", "));
    }
    let uniqueness = check_uniqueness(&motion_pairs(&problem.poses, &problem.extrinsic), DEFAULT_ANGLE_TOL);
    if !uniqueness.unique {
        warn!("extrinsic may not be unique: {}", uniqueness.reasons.join("; "));
    }

    create_dir(&cfg.output)?;
    write_json(cfg.output.join("poses.json"), &problem.poses)?;
    write_json(cfg.output.join("extrinsic.json"), &problem.extrinsic)?;
    write_json(cfg.output.join("report.json"), &report)?;
    write_json(
        cfg.output.join("uniqueness.json"),
        &UniquenessReport {
            unique: uniqueness.unique,
            reasons: &uniqueness.reasons,
        },
    )?;
    write_json(cfg.output.join(STATE_FILE), &ProblemState::from(&problem))?;
    info!("final cost {:e} after {} iterations", report.final_cost, report.iterations);
    Ok(())
}

fn load_state(cfg: &RunConfig) -> Result<Problem, CliError> {
    let path = cfg.output.join(STATE_FILE);
    if !path.exists() {
        return Err(CliError::Io(format!("{}: no solved state; run `solve` first", path.display())));
    }
    let state: ProblemState = read_json(&path)?;
    Ok(state.into())
}

pub fn probe(cfg: &RunConfig) -> Result<(), CliError> {
    let problem = load_state(cfg)?;
    let sweeps = sweep_all(&problem, &cfg.sweep)?;
    for s in &sweeps {
        write_sweep_csv(cfg.output.join(format!("sweep_{}.csv", s.dimension)), std::slice::from_ref(s))?;
    }
    let flatness: Vec<_> = flatness_report(&sweeps, cfg.flat_tolerance)
        .into_iter()
        .zip(&sweeps)
        .map(|((dimension, flatness), s)| FlatnessEntry {
            dimension: dimension.to_string(),
            flatness,
            relative_variation: s.relative_variation(),
        })
        .collect();
    for f in &flatness {
        if f.flatness == lidarcam::observability::Flatness::Flat {
            warn!("extrinsic {} is unobservable (relative variation {:e})", f.dimension, f.relative_variation);
        }
    }
    write_json(cfg.output.join("flatness.json"), &flatness)?;
    Ok(())
}

#[derive(Serialize)]
struct FlatnessEntry {
    dimension: String,
    flatness: lidarcam::observability::Flatness,
    relative_variation: f64,
}

fn with_curvature(cloud: PointCloud, k: usize) -> Result<PointCloud, CliError> {
    if cloud.normals.is_some() && cloud.curvatures.is_some() {
        Ok(cloud)
    } else {
        Ok(estimate_normals(&cloud, k)?)
    }
}

pub fn refine(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.depth_maps.is_empty() {
        return Err(CliError::Config("depth_maps: refinement needs one stereo depth map per station".into()));
    }
    let problem = load_state(cfg)?;
    let camera: CameraFile = read_json(&cfg.camera)?;
    let te = problem.extrinsic;
    let mut refined = Vec::with_capacity(cfg.depth_maps.len());
    for (i, path) in cfg.depth_maps.iter().enumerate() {
        let stereo = read_depth_map(path)?;
        let cloud = with_curvature(read_ply(&cfg.clouds[i])?, cfg.prepare.correspond.normal_k)?;
        let lidar = project_lidar_depth(&cloud, &te, &camera.intrinsics, stereo.width, stereo.height);
        let cleaned = remove_outliers(&stereo, &lidar, cfg.refine.max_diff, cfg.refine.radius)?;
        let filled = fill_holes(&cleaned, &cloud, &te, &camera.intrinsics, &cfg.refine)?;
        info!(
            "station {i}: {} valid stereo pixels, {} after removal, {} after filling",
            stereo.valid_count(),
            cleaned.valid_count(),
            filled.valid_count()
        );
        write_depth_map(cfg.output.join(station_file("refined", i, "dmap")), &filled)?;
        refined.push(filled);
    }
    let model = assemble_model(&refined, &problem.poses, &camera.intrinsics, cfg.voxel)?;
    write_ply(cfg.output.join("model.ply"), &model, PlyFormat::BinaryLittleEndian)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let Some(truth_path) = &cfg.truth_model else {
        return Err(CliError::Config("truth_model: evaluation needs a reference model".into()));
    };
    let model_path = cfg.output.join("model.ply");
    if !model_path.exists() {
        return Err(CliError::Io(format!("{}: no model; run `refine` first", model_path.display())));
    }
    let mut model = read_ply(&model_path)?;
    let truth = with_curvature(read_ply(truth_path)?, cfg.prepare.correspond.normal_k)?;
    if let Some(icp) = &cfg.icp {
        let r = icp_point_to_plane(&model, &truth, &lidarcam::Pose::identity(), icp)?;
        info!("ICP: {} iterations, rms {:e}", r.iterations, r.rms);
        model = model.transformed(&r.transform);
        write_json(cfg.output.join("icp.json"), &r)?;
    }
    let report = distance_map(&model, &truth, &cfg.distance)?;
    info!(
        "mean {:e} m, median {:e} m over {} points",
        report.mean, report.median, report.count
    );
    write_json(cfg.output.join("distance_report.json"), &report)?;
    write_histogram_csv(cfg.output.join("histogram.csv"), &report)?;
    Ok(())
}
