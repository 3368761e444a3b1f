//! LiDAR-camera self-calibration by joint bundle adjustment and
//! point-to-plane registration over multiple stations.
//!
//! A typical run associates stereo features across stations
//! ([`graph::associate_features`]), extracts LiDAR point-to-plane
//! correspondences ([`correspond::LidarScans`]), and solves for station poses,
//! landmarks and the LiDAR-to-camera extrinsic with [`solver::solve_joint`].

pub mod correspond;
pub mod evaluate;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod mapping;
pub mod observability;
pub mod pipeline;
pub mod solver;
pub mod synth;

pub use correspond::{CorrespondConfig, CorrespondError, LidarScans, PointCloud};
pub use evaluate::EvaluateError;
pub use geometry::{CameraIntrinsics, DepthKind, GeometryError, Landmark, Pose};
pub use graph::{Adjacency, CameraObservation, Feature, GraphError, LidarObservation};
pub use io::FormatError;
pub use mapping::{DepthMap, MappingError};
pub use observability::ObservabilityError;
pub use solver::{Problem, ProblemState, SolveReport, SolverConfig, SolverError};
pub use synth::SynthError;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Correspond(#[from] CorrespondError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Observability(#[from] ObservabilityError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
    #[error(transparent)]
    Format(#[from] FormatError),
}
