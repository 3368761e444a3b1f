//! JSON configuration files.

use std::path::{Path, PathBuf};

use lidarcam::evaluate::{DistanceConfig, IcpConfig};
use lidarcam::geometry::{CameraIntrinsics, DepthKind, Pose};
use lidarcam::mapping::RefineConfig;
use lidarcam::observability::SweepSpec;
use lidarcam::pipeline::PrepareConfig;
use lidarcam::solver::{SingularPolicy, SolverConfig};
use lidarcam::synth::{SceneSpec, StereoDefects};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Camera model shared by every station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub intrinsics: CameraIntrinsics,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub depth_kind: DepthKind,
}

/// Magnitude of the error applied to the true extrinsic to form the initial guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialError {
    /// Meters.
    pub translation: f64,
    pub rotation_deg: f64,
}

impl Default for InitialError {
    fn default() -> Self {
        Self {
            translation: 0.05,
            rotation_deg: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub initial_extrinsic_error: InitialError,
    /// When set, a corrupted stereo depth map is written for every station.
    pub stereo: Option<StereoDefects>,
    /// Points in the reference model; 0 skips it.
    pub truth_model_points: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            initial_extrinsic_error: InitialError::default(),
            stereo: None,
            truth_model_points: 50_000,
        }
    }
}

/// Paths and settings for solve, probe, refine and eval. Relative paths are
/// resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub camera: PathBuf,
    pub features: Vec<PathBuf>,
    pub clouds: Vec<PathBuf>,
    pub rough: PathBuf,
    pub initial_extrinsic: Pose,
    pub output: PathBuf,
    pub prepare: PrepareConfig,
    pub solver: SolverConfig,
    pub sweep: SweepSpec,
    /// Relative variation below which a sweep counts as flat.
    pub flat_tolerance: f64,
    pub refine: RefineConfig,
    /// Stereo depth maps, one per station, for refinement.
    pub depth_maps: Vec<PathBuf>,
    /// Voxel size for model assembly, meters.
    pub voxel: Option<f64>,
    pub truth_model: Option<PathBuf>,
    pub distance: DistanceConfig,
    /// Align the model to the truth with ICP before measuring distances.
    pub icp: Option<IcpConfig>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            camera: PathBuf::from("camera.json"),
            features: Vec::new(),
            clouds: Vec::new(),
            rough: PathBuf::from("rough.json"),
            initial_extrinsic: Pose::identity(),
            output: PathBuf::from("solution"),
            prepare: PrepareConfig::default(),
            solver: SolverConfig {
                singular: SingularPolicy::Report,
                ..Default::default()
            },
            sweep: SweepSpec::default(),
            flat_tolerance: 1e-9,
            refine: RefineConfig::default(),
            depth_maps: Vec::new(),
            voxel: None,
            truth_model: None,
            distance: DistanceConfig::default(),
            icp: None,
            seed: 0,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads the file, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = lidarcam::io::read_json(path).map_err(|e| CliError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.camera = resolve(base, &cfg.camera);
        cfg.rough = resolve(base, &cfg.rough);
        cfg.output = resolve(base, &cfg.output);
        for p in cfg.features.iter_mut().chain(cfg.clouds.iter_mut()).chain(cfg.depth_maps.iter_mut()) {
            *p = resolve(base, p);
        }
        if let Some(t) = &mut cfg.truth_model {
            *t = resolve(base, t);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.features.is_empty() {
            return bad("features: no stations listed".into());
        }
        if self.clouds.len() != self.features.len() {
            return bad(format!(
                "clouds: {} entries for {} feature files",
                self.clouds.len(),
                self.features.len()
            ));
        }
        if !self.depth_maps.is_empty() && self.depth_maps.len() != self.features.len() {
            return bad(format!(
                "depth_maps: {} entries for {} stations",
                self.depth_maps.len(),
                self.features.len()
            ));
        }
        let inputs = [&self.camera, &self.rough]
            .into_iter()
            .chain(&self.features)
            .chain(&self.clouds)
            .chain(&self.depth_maps)
            .chain(self.truth_model.as_ref());
        for p in inputs {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if let Some(v) = self.voxel {
            if !(v > 0.0) {
                return bad("voxel: must be positive".into());
            }
        }
        Ok(())
    }
}
