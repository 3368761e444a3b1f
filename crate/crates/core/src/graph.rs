//! Observation containers, descriptor-level feature association across
//! stations, and the pose-graph adjacency.

use std::collections::VecDeque;

use log::warn;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, DepthKind, Landmark, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("association needs at least two stations, got {0}")]
    TooFewStations(usize),
    #[error("descriptor length mismatch: expected {expected}, station {station} feature {index} has {found}")]
    DescriptorLengthMismatch {
        station: usize,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("adjacency dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("initial pose guess lacks station {0}")]
    MissingPose(usize),
    #[error("station graph is disconnected: components {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },
}

/// An image key point with an associated stereo depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub descriptor: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl Feature {
    pub fn new(pixel: Vector2<f64>, depth: f64, descriptor: Vec<f64>) -> Self {
        Self {
            pixel,
            depth,
            descriptor,
            label: None,
        }
    }
}

/// `{i, k, u, d, w}`: landmark `k` seen by camera `i` at pixel `u` with depth `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraObservation {
    pub camera: usize,
    pub landmark: usize,
    pub pixel: Vector2<f64>,
    pub depth: f64,
    pub weight: f64,
}

/// `{i, j, p, q, n, w}`: point `p` of source cloud `j` matched to point `q`
/// with normal `n` in target cloud `i` (`i < j`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarObservation {
    pub target: usize,
    pub source: usize,
    pub point: Vector3<f64>,
    pub neighbor: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub weight: f64,
}

/// Symmetric boolean station adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    n: usize,
    cells: Vec<bool>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![false; n * n],
        }
    }

    pub fn fully_connected(n: usize) -> Self {
        let mut a = Self::new(n);
        for i in 0..n {
            for j in i + 1..n {
                a.connect(i, j);
            }
        }
        a
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut a = Self::new(n);
        for &(i, j) in edges {
            a.connect(i, j);
        }
        a
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Sets both `(i, j)` and `(j, i)`; self-loops are ignored.
    pub fn connect(&mut self, i: usize, j: usize) {
        if i != j {
            self.cells[i * self.n + j] = true;
            self.cells[j * self.n + i] = true;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    /// Connected pairs `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }
}

/// Element-wise OR of two adjacencies.
pub fn merge_adjacency(ac: &Adjacency, al: &Adjacency) -> Result<Adjacency, GraphError> {
    if ac.n != al.n {
        return Err(GraphError::DimensionMismatch(ac.n, al.n));
    }
    Ok(Adjacency {
        n: ac.n,
        cells: ac.cells.iter().zip(&al.cells).map(|(a, b)| *a || *b).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Connectivity {
    pub connected: bool,
    /// Components sorted by their smallest member; members ascending.
    pub components: Vec<Vec<usize>>,
}

pub fn check_connected(a: &Adjacency) -> Connectivity {
    let mut seen = vec![false; a.n];
    let mut components = Vec::new();
    for start in 0..a.n {
        if seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            for w in a.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    Connectivity {
        connected: components.len() <= 1,
        components,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    /// Maximum Euclidean descriptor distance of an accepted match.
    pub max_distance: f64,
    /// Lowe ratio: best / second-best distance must not exceed this.
    pub ratio: f64,
    /// Additionally require the match to be mutual.
    pub cross_check: bool,
    pub depth_kind: DepthKind,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            max_distance: 0.5,
            ratio: 0.8,
            cross_check: false,
            depth_kind: DepthKind::Range,
        }
    }
}

/// Result of feature association.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Association {
    pub observations: Vec<CameraObservation>,
    /// Landmark positions expressed in the frame of their anchor station.
    pub landmarks: Vec<Landmark>,
    /// Station whose feature created each landmark.
    pub anchors: Vec<usize>,
    pub adjacency: Adjacency,
    /// Per-station feature labels after association.
    pub labels: Vec<Vec<Option<usize>>>,
}

impl Association {
    /// Landmarks moved to the world frame using per-station camera-to-world poses.
    pub fn landmarks_in_world(&self, poses: &[Pose]) -> Result<Vec<Landmark>, GraphError> {
        self.landmarks
            .iter()
            .zip(&self.anchors)
            .map(|(l, &a)| {
                let pose = poses.get(a).ok_or(GraphError::MissingPose(a))?;
                Ok(Landmark {
                    id: l.id,
                    position: pose.transform_point(&l.position),
                })
            })
            .collect()
    }
}

fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn has_depth(f: &Feature) -> bool {
    f.depth > 0.0 && f.depth.is_finite()
}

/// Best and second-best match distances of `query` among the features of
/// `set` that carry a depth.
fn best_match(query: &[f64], set: &[Feature]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (idx, g) in set.iter().enumerate().filter(|(_, g)| has_depth(g)) {
        let d = descriptor_distance(query, &g.descriptor);
        match best {
            Some((_, bd)) if d >= bd => second = second.min(d),
            Some((_, bd)) => {
                second = bd;
                best = Some((idx, d));
            }
            None => best = Some((idx, d)),
        }
    }
    best.map(|(i, d)| (i, d, second))
}

fn similar(best: f64, second: f64, cfg: &AssociationConfig) -> bool {
    if best > cfg.max_distance {
        return false;
    }
    if second.is_finite() {
        // 0/0 for duplicated descriptors counts as ambiguous
        if second <= 0.0 || best / second > cfg.ratio {
            return false;
        }
    }
    true
}

/// Greedy incremental association over all station pairs `(i, j > i)`.
///
/// Features without a positive depth are ignored. New landmarks are placed by
/// back-projecting the creating feature in its own station frame; use
/// [`Association::landmarks_in_world`] once poses are known.
pub fn associate_features(
    feature_sets: &[Vec<Feature>],
    intrinsics: &CameraIntrinsics,
    cfg: &AssociationConfig,
) -> Result<Association, GraphError> {
    let n = feature_sets.len();
    if n < 2 {
        return Err(GraphError::TooFewStations(n));
    }
    let dim = feature_sets
        .iter()
        .flat_map(|s| s.first())
        .map(|f| f.descriptor.len())
        .next()
        .unwrap_or(0);
    for (s, set) in feature_sets.iter().enumerate() {
        if set.is_empty() {
            warn!("station {s} has no features; it contributes no matches");
        }
        for (idx, f) in set.iter().enumerate() {
            if f.descriptor.len() != dim {
                return Err(GraphError::DescriptorLengthMismatch {
                    station: s,
                    index: idx,
                    expected: dim,
                    found: f.descriptor.len(),
                });
            }
        }
    }

    let sets = feature_sets;
    let mut labels: Vec<Vec<Option<usize>>> = sets.iter().map(|s| vec![None; s.len()]).collect();
    let mut observations = Vec::new();
    let mut landmarks = Vec::new();
    let mut anchors = Vec::new();
    // seen[station] holds the landmark ids already observed by that station
    let mut seen: Vec<std::collections::HashSet<usize>> = vec![Default::default(); n];
    let mut adjacency = Adjacency::new(n);

    let observe = |station: usize, f: &Feature, k: usize| CameraObservation {
        camera: station,
        landmark: k,
        pixel: f.pixel,
        depth: f.depth,
        weight: 1.0,
    };

    for i in 0..n {
        for j in i + 1..n {
            for fi in 0..sets[i].len() {
                let f = &sets[i][fi];
                if !has_depth(f) {
                    continue;
                }
                let Some((gi, best, second)) = best_match(&f.descriptor, &sets[j]) else {
                    continue;
                };
                if !similar(best, second, cfg) {
                    continue;
                }
                if cfg.cross_check {
                    match best_match(&sets[j][gi].descriptor, &sets[i]) {
                        Some((back, _, _)) if back == fi => {}
                        _ => continue,
                    }
                }
                let g = &sets[j][gi];
                match (labels[i][fi], labels[j][gi]) {
                    (None, None) => {
                        let k = landmarks.len();
                        landmarks.push(Landmark {
                            id: k,
                            position: intrinsics.back_project(&f.pixel, f.depth, cfg.depth_kind),
                        });
                        anchors.push(i);
                        labels[i][fi] = Some(k);
                        labels[j][gi] = Some(k);
                        observations.push(observe(i, f, k));
                        observations.push(observe(j, g, k));
                        seen[i].insert(k);
                        seen[j].insert(k);
                    }
                    (Some(k), None) => {
                        // a station observes each landmark at most once
                        if !seen[j].insert(k) {
                            continue;
                        }
                        labels[j][gi] = Some(k);
                        observations.push(observe(j, g, k));
                    }
                    (None, Some(k)) => {
                        if !seen[i].insert(k) {
                            continue;
                        }
                        labels[i][fi] = Some(k);
                        observations.push(observe(i, f, k));
                    }
                    (Some(_), Some(_)) => continue,
                }
                adjacency.connect(i, j);
            }
        }
    }

    Ok(Association {
        observations,
        landmarks,
        anchors,
        adjacency,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 0.1).unwrap()
    }

    fn feat(desc: Vec<f64>) -> Feature {
        Feature::new(Vector2::new(50.0, 50.0), 2.0, desc)
    }

    #[test]
    fn single_match_creates_landmark() {
        let sets = vec![vec![feat(vec![1.0, 0.0])], vec![feat(vec![1.0, 0.0])]];
        let a = associate_features(&sets, &k(), &AssociationConfig::default()).unwrap();
        assert_eq!(a.landmarks.len(), 1);
        assert_eq!(a.observations.len(), 2);
        assert!(a.adjacency.get(0, 1) && a.adjacency.get(1, 0));
        assert!((a.landmarks[0].position - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn chain_propagates_label() {
        // 0<->1 and 1<->2 match; 0 and 2 share nothing
        let sets = vec![
            vec![feat(vec![1.0, 0.0, 0.0])],
            vec![feat(vec![0.9, 0.1, 0.0])],
            vec![feat(vec![0.8, 0.3, 0.0])],
        ];
        let cfg = AssociationConfig {
            max_distance: 0.3,
            ..Default::default()
        };
        let a = associate_features(&sets, &k(), &cfg).unwrap();
        assert_eq!(a.landmarks.len(), 1);
        assert_eq!(a.observations.len(), 3);
        assert!(a.adjacency.get(0, 1) && a.adjacency.get(1, 2) && !a.adjacency.get(0, 2));
    }

    #[test]
    fn orthogonal_descriptors_never_match() {
        let sets = vec![
            vec![feat(vec![1.0, 0.0, 0.0, 0.0]), feat(vec![0.0, 1.0, 0.0, 0.0])],
            vec![feat(vec![0.0, 0.0, 1.0, 0.0]), feat(vec![0.0, 0.0, 0.0, 1.0])],
        ];
        let a = associate_features(&sets, &k(), &AssociationConfig::default()).unwrap();
        assert!(a.landmarks.is_empty() && a.observations.is_empty());
        assert!(a.adjacency.edges().is_empty());
    }

    #[test]
    fn ratio_test_rejects_ambiguous_match() {
        let sets = vec![
            vec![feat(vec![1.0, 0.0])],
            vec![feat(vec![1.0, 0.05]), feat(vec![1.0, -0.05])],
        ];
        let a = associate_features(&sets, &k(), &AssociationConfig::default()).unwrap();
        assert!(a.observations.is_empty());
    }

    #[test]
    fn descriptor_length_mismatch_is_error() {
        let sets = vec![vec![feat(vec![1.0, 0.0])], vec![feat(vec![1.0])]];
        let err = associate_features(&sets, &k(), &AssociationConfig::default()).unwrap_err();
        assert!(matches!(err, GraphError::DescriptorLengthMismatch { station: 1, .. }));
    }

    #[test]
    fn empty_station_is_tolerated() {
        let sets = vec![vec![feat(vec![1.0])], vec![], vec![feat(vec![1.0])]];
        let a = associate_features(&sets, &k(), &AssociationConfig::default()).unwrap();
        assert_eq!(a.landmarks.len(), 1);
        assert!(a.adjacency.get(0, 2));
    }

    #[test]
    fn too_few_stations() {
        let err = associate_features(&[vec![]], &k(), &AssociationConfig::default()).unwrap_err();
        assert_eq!(err, GraphError::TooFewStations(1));
    }

    #[test]
    fn features_without_depth_are_dropped() {
        let mut f = feat(vec![1.0]);
        f.depth = 0.0;
        let sets = vec![vec![f], vec![feat(vec![1.0])]];
        let a = associate_features(&sets, &k(), &AssociationConfig::default()).unwrap();
        assert!(a.observations.is_empty());
    }

    #[test]
    fn merge_is_union() {
        let n = 5;
        let ac = Adjacency::from_edges(n, &[(0, 1), (1, 2)]);
        let al = Adjacency::from_edges(n, &[(3, 4), (2, 3)]);
        let m = merge_adjacency(&ac, &al).unwrap();
        let mut expect: Vec<_> = ac.edges().into_iter().chain(al.edges()).collect();
        expect.sort();
        assert_eq!(m.edges(), expect);
        assert_eq!(merge_adjacency(&ac, &ac).unwrap(), ac);
        assert_eq!(merge_adjacency(&Adjacency::new(n), &al).unwrap(), al);
        assert!(merge_adjacency(&ac, &Adjacency::new(3)).is_err());
    }

    #[test]
    fn connectivity() {
        let chain = Adjacency::from_edges(3, &[(0, 1), (1, 2)]);
        let c = check_connected(&chain);
        assert!(c.connected);
        assert_eq!(c.components, vec![vec![0, 1, 2]]);
        let pairs = Adjacency::from_edges(4, &[(2, 3), (0, 1)]);
        let c = check_connected(&pairs);
        assert!(!c.connected);
        assert_eq!(c.components, vec![vec![0, 1], vec![2, 3]]);
    }
}
