//! Python bindings: poses, intrinsics, synthetic scenes, problem setup and
//! solving, extrinsic sweeps, PLY files and model evaluation.

use lidarcam::correspond::PointCloud;
use lidarcam::evaluate::{distance_map as distance_map_impl, DistanceConfig};
use lidarcam::geometry::{self, CameraIntrinsics};
use lidarcam::io::{read_ply as read_ply_impl, write_ply as write_ply_impl, PlyFormat};
use lidarcam::observability::{check_uniqueness, motion_pairs, sweep_extrinsic, SweepDimension, DEFAULT_ANGLE_TOL};
use lidarcam::pipeline::{prepare_problem, PrepareConfig, StationData};
use lidarcam::solver::{solve_joint, total_cost, ProblemState, SolverConfig};
use lidarcam::synth::{generate, SceneSpec, SyntheticScene};
use nalgebra::{Vector3, Vector6};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(lidarcam, LidarcamError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    LidarcamError::new_err(e.to_string())
}

fn vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn from_json<T: DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(T::default()),
    }
}

/// Converts any serializable value into plain Python objects through JSON.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (s,))
}

/// Rigid transform `p -> R p + t`.
#[pyclass(name = "Pose", module = "lidarcam")]
#[derive(Clone, Copy)]
struct PyPose(geometry::Pose);

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (rotation_vector=[0.0; 3], translation=[0.0; 3]))]
    fn new(rotation_vector: [f64; 3], translation: [f64; 3]) -> Self {
        Self(geometry::Pose::from_axis_angle(vec3(rotation_vector), vec3(translation)))
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(geometry::Pose::identity())
    }

    /// From a 4x4 (or 3x4) row-major matrix.
    #[staticmethod]
    fn from_matrix(m: Vec<Vec<f64>>) -> PyResult<Self> {
        if m.len() < 3 || m.iter().take(3).any(|r| r.len() < 4) {
            return Err(PyValueError::new_err("expected a 3x4 or 4x4 matrix"));
        }
        let r = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
        Ok(Self(geometry::Pose::from_rotation_matrix(&r, Vector3::new(m[0][3], m[1][3], m[2][3]))))
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        arr3(self.0.translation())
    }

    #[getter]
    fn rotation_vector(&self) -> [f64; 3] {
        arr3(&self.0.rotation().scaled_axis())
    }

    /// Quaternion as `[w, x, y, z]`.
    #[getter]
    fn quaternion(&self) -> [f64; 4] {
        let q = self.0.rotation().quaternion();
        [q.w, q.i, q.j, q.k]
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        let r = self.0.rotation_matrix();
        let t = self.0.translation();
        let mut m: Vec<Vec<f64>> = (0..3).map(|i| vec![r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]]).collect();
        m.push(vec![0.0, 0.0, 0.0, 1.0]);
        m
    }

    fn compose(&self, other: &PyPose) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn __mul__(&self, other: &PyPose) -> Self {
        self.compose(other)
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        arr3(&self.0.transform_point(&vec3(p)))
    }

    /// Applies `[dt, dθ]` with the rotation increment on the left.
    fn retract(&self, delta: [f64; 6]) -> Self {
        Self(self.0.retract(&Vector6::from_row_slice(&delta)))
    }

    /// `(translation distance, rotation angle)` to another pose.
    fn distance(&self, other: &PyPose) -> (f64, f64) {
        self.0.distance(&other.0)
    }

    fn __repr__(&self) -> String {
        let t = self.translation();
        let w = self.rotation_vector();
        format!(
            "Pose(rotation_vector=[{:.6}, {:.6}, {:.6}], translation=[{:.6}, {:.6}, {:.6}])",
            w[0], w[1], w[2], t[0], t[1], t[2]
        )
    }
}

/// Transform taking LiDAR points of station `j` into the LiDAR frame of station `i`.
#[pyfunction]
fn relative_cloud_transform(ti: &PyPose, tj: &PyPose, te: &PyPose) -> PyPose {
    PyPose(geometry::relative_cloud_transform(&ti.0, &tj.0, &te.0))
}

#[pyclass(name = "CameraIntrinsics", module = "lidarcam")]
#[derive(Clone, Copy)]
struct PyIntrinsics(CameraIntrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64) -> PyResult<Self> {
        CameraIntrinsics::new(fx, fy, cx, cy, baseline).map(Self).map_err(err)
    }

    /// Pixel of a camera-frame point.
    fn project(&self, p: [f64; 3]) -> PyResult<(f64, f64)> {
        let u = self.0.project(&vec3(p)).map_err(err)?;
        Ok((u.x, u.y))
    }

    /// Stereo depth σ for a depth and pixel σ.
    fn depth_sigma(&self, depth: f64, pixel_sigma: f64) -> f64 {
        self.0.depth_sigma(depth, pixel_sigma)
    }

    fn __repr__(&self) -> String {
        let k = &self.0;
        format!(
            "CameraIntrinsics(fx={}, fy={}, cx={}, cy={}, baseline={})",
            k.fx, k.fy, k.cx, k.cy, k.baseline
        )
    }
}

/// A generated multi-station dataset with its ground truth.
#[pyclass(name = "Scene", module = "lidarcam")]
struct PyScene(SyntheticScene);

#[pymethods]
impl PyScene {
    /// Generates a scene. `spec` is a JSON object overriding the default scene.
    #[staticmethod]
    #[pyo3(signature = (spec=None, seed=None))]
    fn generate(spec: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut spec: SceneSpec = from_json(spec)?;
        if let Some(s) = seed {
            spec.seed = s;
        }
        generate(&spec).map(Self).map_err(err)
    }

    #[getter]
    fn stations(&self) -> usize {
        self.0.features.len()
    }

    #[getter]
    fn intrinsics(&self) -> PyIntrinsics {
        PyIntrinsics(self.0.intrinsics)
    }

    #[getter]
    fn true_poses(&self) -> Vec<PyPose> {
        self.0.truth.poses.iter().map(|p| PyPose(*p)).collect()
    }

    #[getter]
    fn true_extrinsic(&self) -> PyPose {
        PyPose(self.0.truth.extrinsic)
    }

    /// `(u, v, depth)` for every feature of a station.
    fn features(&self, station: usize) -> PyResult<Vec<(f64, f64, f64)>> {
        let fs = self.0.features.get(station).ok_or_else(|| PyValueError::new_err("no such station"))?;
        Ok(fs.iter().map(|f| (f.pixel.x, f.pixel.y, f.depth)).collect())
    }

    /// Points of a station's cloud in its LiDAR frame.
    fn cloud(&self, station: usize) -> PyResult<Vec<[f64; 3]>> {
        let c = self.0.clouds.get(station).ok_or_else(|| PyValueError::new_err("no such station"))?;
        Ok(c.points.iter().map(arr3).collect())
    }
}

/// Poses, landmarks, extrinsic and their observations.
#[pyclass(name = "Problem", module = "lidarcam")]
struct PyProblem(lidarcam::Problem);

fn dimension(name: &str) -> PyResult<SweepDimension> {
    SweepDimension::ALL
        .into_iter()
        .find(|d| d.to_string() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown dimension {name:?}; expected x, y, z, roll, pitch or yaw")))
}

#[pymethods]
impl PyProblem {
    /// Associates features, chains initial poses and extracts LiDAR
    /// correspondences. `config` is a JSON preparation config.
    #[staticmethod]
    #[pyo3(signature = (scene, initial_extrinsic, seed=0, config=None))]
    fn prepare(scene: &PyScene, initial_extrinsic: &PyPose, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let cfg: PrepareConfig = from_json(config)?;
        let s = &scene.0;
        let data = StationData {
            features: s.features.clone(),
            clouds: s.clouds.clone(),
            rough: s.rough.clone(),
        };
        let prepared = prepare_problem(data, &s.intrinsics, &initial_extrinsic.0, &cfg, seed).map_err(err)?;
        Ok(Self(prepared.problem))
    }

    /// Restores a problem saved with `to_json` (without clouds).
    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        let state: ProblemState = serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self(state.into()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&ProblemState::from(&self.0)).map_err(err)
    }

    /// Runs the joint solver and returns its report as a dict. `config` is a
    /// JSON solver config.
    #[pyo3(signature = (config=None))]
    fn solve<'py>(&mut self, py: Python<'py>, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let cfg: SolverConfig = from_json(config)?;
        let problem = &mut self.0;
        let report = py.allow_threads(|| solve_joint(problem, &cfg)).map_err(err)?;
        to_py(py, &report)
    }

    fn total_cost(&self) -> f64 {
        total_cost(&self.0)
    }

    #[getter]
    fn poses(&self) -> Vec<PyPose> {
        self.0.poses.iter().map(|p| PyPose(*p)).collect()
    }

    #[getter]
    fn extrinsic(&self) -> PyPose {
        PyPose(self.0.extrinsic)
    }

    #[setter]
    fn set_extrinsic(&mut self, te: PyPose) {
        self.0.extrinsic = te.0;
    }

    #[getter]
    fn landmarks(&self) -> Vec<[f64; 3]> {
        self.0.landmarks.iter().map(|l| arr3(&l.position)).collect()
    }

    #[getter]
    fn camera_observations(&self) -> usize {
        self.0.camera_obs.len()
    }

    #[getter]
    fn lidar_observations(&self) -> usize {
        self.0.lidar_obs.len()
    }

    /// Cost along a symmetric grid of extrinsic offsets in one dimension.
    #[pyo3(signature = (dimension_name, half_range, steps=41))]
    fn sweep(&self, dimension_name: &str, half_range: f64, steps: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = sweep_extrinsic(&self.0, dimension(dimension_name)?, half_range, steps).map_err(err)?;
        Ok((s.offsets, s.costs))
    }

    /// `(unique, reasons)` from the relative motions of the current poses.
    fn uniqueness(&self) -> (bool, Vec<String>) {
        let u = check_uniqueness(&motion_pairs(&self.0.poses, &self.0.extrinsic), DEFAULT_ANGLE_TOL);
        (u.unique, u.reasons)
    }
}

/// Reads a PLY file into `(points, normals or None)`.
#[pyfunction]
fn read_ply(path: &str) -> PyResult<(Vec<[f64; 3]>, Option<Vec<[f64; 3]>>)> {
    let c = read_ply_impl(path).map_err(err)?;
    Ok((
        c.points.iter().map(arr3).collect(),
        c.normals.map(|n| n.iter().map(arr3).collect()),
    ))
}

fn cloud(points: Vec<[f64; 3]>, normals: Option<Vec<[f64; 3]>>) -> PyResult<PointCloud> {
    let mut c = PointCloud::new(points.into_iter().map(vec3).collect());
    if let Some(n) = normals {
        if n.len() != c.len() {
            return Err(PyValueError::new_err("normals and points differ in length"));
        }
        c.normals = Some(n.into_iter().map(vec3).collect());
    }
    Ok(c)
}

/// Writes points (and optional normals) as binary little-endian PLY.
#[pyfunction]
#[pyo3(signature = (path, points, normals=None))]
fn write_ply(path: &str, points: Vec<[f64; 3]>, normals: Option<Vec<[f64; 3]>>) -> PyResult<()> {
    write_ply_impl(path, &cloud(points, normals)?, PlyFormat::BinaryLittleEndian).map_err(err)
}

/// Point-to-plane distances from a model to a reference cloud with normals.
#[pyfunction]
#[pyo3(signature = (model, truth, truth_normals, max_dist=0.02, bins=100, signed=false))]
fn distance_map<'py>(
    py: Python<'py>,
    model: Vec<[f64; 3]>,
    truth: Vec<[f64; 3]>,
    truth_normals: Vec<[f64; 3]>,
    max_dist: f64,
    bins: usize,
    signed: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let model = cloud(model, None)?;
    let truth = cloud(truth, Some(truth_normals))?;
    let cfg = DistanceConfig { max_dist, bins, signed };
    let report = distance_map_impl(&model, &truth, &cfg).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn _lidarcam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LidarcamError", m.py().get_type::<LidarcamError>())?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(relative_cloud_transform, m)?)?;
    m.add_function(wrap_pyfunction!(read_ply, m)?)?;
    m.add_function(wrap_pyfunction!(write_ply, m)?)?;
    m.add_function(wrap_pyfunction!(distance_map, m)?)?;
    Ok(())
}
