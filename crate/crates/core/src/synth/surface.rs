//! Analytic surfaces for synthetic scenes.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Surface {
    /// Planar rectangle spanned by `u` and `normal × u`.
    Rectangle {
        center: Vector3<f64>,
        normal: Vector3<f64>,
        u: Vector3<f64>,
        half_u: f64,
        half_v: f64,
    },
    /// Closed box; `pose` maps box coordinates to the scene.
    Box { pose: Pose, half_extents: Vector3<f64> },
    /// Open cylinder around the local y axis, centered at the pose origin.
    Cylinder { pose: Pose, radius: f64, height: f64 },
}

/// A ray hit: distance along the (unit) direction and the surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vector3<f64>,
    pub surface: usize,
}

impl Surface {
    pub fn rectangle(center: Vector3<f64>, normal: Vector3<f64>, u: Vector3<f64>, half_u: f64, half_v: f64) -> Self {
        let normal = normal.normalize();
        let u = (u - normal * normal.dot(&u)).normalize();
        Surface::Rectangle {
            center,
            normal,
            u,
            half_u,
            half_v,
        }
    }

    fn box_faces(pose: &Pose, h: &Vector3<f64>) -> Vec<Surface> {
        let r = pose.rotation_matrix();
        let mut out = Vec::with_capacity(6);
        for axis in 0..3 {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            for sign in [-1.0, 1.0] {
                let mut n = Vector3::zeros();
                n[axis] = sign;
                let mut ua = Vector3::zeros();
                ua[a] = 1.0;
                out.push(Surface::Rectangle {
                    center: pose.transform_point(&(n * h[axis])),
                    normal: r * n,
                    u: r * ua,
                    half_u: h[a],
                    half_v: h[b],
                });
            }
        }
        out
    }

    pub fn area(&self) -> f64 {
        match self {
            Surface::Rectangle { half_u, half_v, .. } => 4.0 * half_u * half_v,
            Surface::Box { half_extents: h, .. } => 8.0 * (h.x * h.y + h.y * h.z + h.z * h.x),
            Surface::Cylinder { radius, height, .. } => 2.0 * std::f64::consts::PI * radius * height,
        }
    }

    /// Uniform sample with its unit normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Surface::Rectangle {
                center,
                normal,
                u,
                half_u,
                half_v,
            } => {
                let v = normal.cross(u);
                let a = rng.random_range(-half_u..=*half_u);
                let b = rng.random_range(-half_v..=*half_v);
                (center + u * a + v * b, *normal)
            }
            Surface::Box { pose, half_extents } => {
                let faces = Self::box_faces(pose, half_extents);
                let total: f64 = faces.iter().map(Surface::area).sum();
                let mut x = rng.random_range(0.0..total);
                for f in &faces {
                    if x < f.area() {
                        return f.sample(rng);
                    }
                    x -= f.area();
                }
                faces[5].sample(rng)
            }
            Surface::Cylinder { pose, radius, height } => {
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let y = rng.random_range(-0.5 * height..=0.5 * height);
                let n = Vector3::new(phi.cos(), 0.0, phi.sin());
                (
                    pose.transform_point(&(n * *radius + Vector3::new(0.0, y, 0.0))),
                    pose.rotation_matrix() * n,
                )
            }
        }
    }

    /// First intersection with a ray from `origin` along unit `dir`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Surface::Rectangle {
                center,
                normal,
                u,
                half_u,
                half_v,
            } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(center - origin)) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let rel = origin + dir * t - center;
                let v = normal.cross(u);
                (rel.dot(u).abs() <= *half_u && rel.dot(&v).abs() <= *half_v).then_some((t, *normal))
            }
            Surface::Box { pose, half_extents } => Self::box_faces(pose, half_extents)
                .iter()
                .filter_map(|f| f.intersect(origin, dir))
                .min_by(|a, b| a.0.total_cmp(&b.0)),
            Surface::Cylinder { pose, radius, height } => {
                let o = pose.inverse_transform_point(origin);
                let d = pose.rotation_matrix().transpose() * dir;
                let dxz = Vector2::new(d.x, d.z);
                let oxz = Vector2::new(o.x, o.z);
                let a = dxz.norm_squared();
                if a < 1e-15 {
                    return None;
                }
                let b = 2.0 * oxz.dot(&dxz);
                let c = oxz.norm_squared() - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    if t > HIT_EPS {
                        let p = o + d * t;
                        if p.y.abs() <= 0.5 * height {
                            let n = Vector3::new(p.x, 0.0, p.z) / *radius;
                            return Some((t, pose.rotation_matrix() * n));
                        }
                    }
                }
                None
            }
        }
    }

    /// The surface moved by `pose`.
    pub fn transformed(&self, pose: &Pose) -> Surface {
        let r = pose.rotation_matrix();
        match self {
            Surface::Rectangle {
                center,
                normal,
                u,
                half_u,
                half_v,
            } => Surface::Rectangle {
                center: pose.transform_point(center),
                normal: r * normal,
                u: r * u,
                half_u: *half_u,
                half_v: *half_v,
            },
            Surface::Box { pose: p, half_extents } => Surface::Box {
                pose: pose.compose(p),
                half_extents: *half_extents,
            },
            Surface::Cylinder { pose: p, radius, height } => Surface::Cylinder {
                pose: pose.compose(p),
                radius: *radius,
                height: *height,
            },
        }
    }
}

/// Nearest hit over a surface set.
pub fn raycast(surfaces: &[Surface], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    surfaces
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.intersect(origin, dir).map(|(t, normal)| Hit { t, normal, surface: i }))
        .min_by(|a, b| a.t.total_cmp(&b.t))
}

/// Whether `point` (on some surface) is seen unobstructed from `origin`.
pub fn visible(surfaces: &[Surface], origin: &Vector3<f64>, point: &Vector3<f64>) -> bool {
    let d = point - origin;
    let dist = d.norm();
    if dist < HIT_EPS {
        return false;
    }
    match raycast(surfaces, origin, &(d / dist)) {
        Some(hit) => hit.t >= dist - 1e-7 * dist.max(1.0),
        None => true,
    }
}

/// Six face-centered squares of a cube pulled apart so neighboring faces do
/// not touch: each face lies at `distance` from `center` with half-size
/// `half_size < distance`.
pub fn exploded_cube(center: Vector3<f64>, distance: f64, half_size: f64) -> Vec<Surface> {
    let mut out = Vec::new();
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut n = Vector3::zeros();
            n[axis] = sign;
            let mut u = Vector3::zeros();
            u[(axis + 1) % 3] = 1.0;
            out.push(Surface::rectangle(center + n * distance, n, u, half_size, half_size));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_lie_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = Pose::from_axis_angle(Vector3::new(0.2, 0.3, -0.1), Vector3::new(1.0, 0.0, 2.0));
        let surfaces = [
            Surface::rectangle(Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.1, 0.0, -1.0), Vector3::x(), 1.0, 0.5),
            Surface::Box {
                pose,
                half_extents: Vector3::new(0.5, 0.3, 0.2),
            },
            Surface::Cylinder {
                pose,
                radius: 0.4,
                height: 1.0,
            },
        ];
        for s in &surfaces {
            for _ in 0..200 {
                let (p, n) = s.sample(&mut rng);
                // a ray aimed at the sample from along its normal hits it
                let origin = p + n * 0.05;
                let (t, hn) = s.intersect(&origin, &(-n)).unwrap();
                assert!((t - 0.05).abs() < 1e-9, "{s:?}");
                assert!(hn.cross(&n).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn occlusion() {
        let surfaces = vec![
            Surface::rectangle(Vector3::new(0.0, 0.0, 2.0), -Vector3::z(), Vector3::x(), 0.5, 0.5),
            Surface::rectangle(Vector3::new(0.0, 0.0, 4.0), -Vector3::z(), Vector3::x(), 2.0, 2.0),
        ];
        let o = Vector3::zeros();
        assert!(!visible(&surfaces, &o, &Vector3::new(0.0, 0.0, 4.0)));
        assert!(visible(&surfaces, &o, &Vector3::new(1.5, 0.0, 4.0)));
        assert!(visible(&surfaces, &o, &Vector3::new(0.0, 0.0, 2.0)));
    }

    #[test]
    fn exploded_faces_do_not_touch() {
        let faces = exploded_cube(Vector3::zeros(), 1.0, 0.8);
        assert_eq!(faces.len(), 6);
        let area: f64 = faces.iter().map(Surface::area).sum();
        assert!((area - 6.0 * 2.56).abs() < 1e-12);
    }
}
