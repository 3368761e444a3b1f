//! Assembles a [`Problem`] from raw station data.

use serde::{Deserialize, Serialize};

use crate::correspond::{estimate_normals, CorrespondConfig, LidarScans, PointCloud};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::graph::{
    associate_features, check_connected, merge_adjacency, Adjacency, Association, AssociationConfig, Feature, GraphError,
};
use crate::io::CloudTransform;
use crate::solver::{initial_poses, Problem, Sigmas, SolverError};
use crate::Error;

/// Per-station inputs.
#[derive(Debug, Clone, Default)]
pub struct StationData {
    pub features: Vec<Vec<Feature>>,
    /// Clouds in their LiDAR frames; normals are estimated when missing.
    pub clouds: Vec<PointCloud>,
    /// Rough LiDAR registrations `T_l` (source cloud into target cloud).
    pub rough: Vec<CloudTransform>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    pub association: AssociationConfig,
    pub correspond: CorrespondConfig,
    pub sigmas: Sigmas,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: Problem,
    pub association: Association,
}

/// Associates features, chains initial poses, back-projects landmarks and
/// extracts the first set of LiDAR observations at the initial estimate.
/// Fails when the merged camera/LiDAR station graph is disconnected.
pub fn prepare_problem(
    data: StationData,
    intrinsics: &CameraIntrinsics,
    extrinsic: &Pose,
    cfg: &PrepareConfig,
    seed: u64,
) -> Result<Prepared, Error> {
    let n = data.features.len();
    if data.clouds.len() != n {
        return Err(SolverError::InvalidProblem(format!("{n} feature sets but {} clouds", data.clouds.len())).into());
    }
    let association = associate_features(&data.features, intrinsics, &cfg.association)?;
    let lidar_edges: Vec<(usize, usize)> = data.rough.iter().map(|r| (r.target, r.source)).collect();
    let adjacency = merge_adjacency(&association.adjacency, &Adjacency::from_edges(n, &lidar_edges))?;
    let conn = check_connected(&adjacency);
    if !conn.connected {
        return Err(GraphError::Disconnected {
            components: conn.components,
        }
        .into());
    }
    let poses = initial_poses(
        n,
        &association.observations,
        intrinsics,
        cfg.association.depth_kind,
        &data.rough,
        extrinsic,
    )?;
    let landmarks = association.landmarks_in_world(&poses)?;

    let clouds = data
        .clouds
        .into_iter()
        .map(|c| {
            if c.normals.is_some() {
                Ok(c)
            } else {
                estimate_normals(&c, cfg.correspond.normal_k)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scans = LidarScans::new(clouds, adjacency, cfg.correspond, seed)?;
    let lidar_obs = scans.extract(&poses, extrinsic)?;

    let problem = Problem {
        poses,
        landmarks,
        extrinsic: *extrinsic,
        camera_obs: association.observations.clone(),
        lidar_obs,
        intrinsics: *intrinsics,
        sigmas: cfg.sigmas,
        depth_kind: cfg.association.depth_kind,
        scans: Some(scans),
    };
    problem.validate()?;
    Ok(Prepared { problem, association })
}
