//! Rigid transforms, the pinhole camera model and the point mappings shared by
//! every residual.
//!
//! Conventions used throughout the crate:
//!
//! * A station pose `T_i` maps camera-frame points into the world frame
//!   (camera-to-world). The world frame is the camera frame of station 0, so
//!   `T_0` is the identity.
//! * The extrinsic `T_e` maps LiDAR-frame points into the camera frame. A LiDAR
//!   point `p` of station `i` therefore lands in the world at `T_i * T_e * p`.
//! * Camera frames look down `+z` with `+y` pointing down the image.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth below which a camera-frame point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {0} in the camera frame")]
    NonPositiveDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Rigid transform on SE(3), stored as a unit quaternion and a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

/// On-disk form: `{"rotation": [w, x, y, z], "translation": [x, y, z]}`.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        let [w, x, y, z] = r.rotation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if w >= 0.0 && (q.norm() - 1.0).abs() < 1e-14 {
            // already canonical: keep the stored bits
            return Pose {
                rotation: UnitQuaternion::new_unchecked(q),
                translation: Vector3::from(r.translation),
            };
        }
        Pose::new(UnitQuaternion::from_quaternion(q), Vector3::from(r.translation))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        PoseRepr {
            rotation: [q.w, q.i, q.j, q.k],
            translation: p.translation.into(),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a pose from an axis-angle vector (radians) and a translation.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(axis_angle), translation)
    }

    pub fn from_rotation_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix(rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// `R * p + t`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `R^T * (p - t)`.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    /// Applies a 6-vector increment `[dt, dθ]`: the rotation is left-multiplied
    /// by `exp(dθ)` and the translation shifted by `dt`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        let dt = delta.fixed_rows::<3>(0).into_owned();
        let dr = delta.fixed_rows::<3>(3).into_owned();
        Pose::new(
            UnitQuaternion::from_scaled_axis(dr) * self.rotation,
            self.translation + dt,
        )
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Unit rotation axis, or `None` for a (near) zero rotation.
    pub fn axis(&self) -> Option<Vector3<f64>> {
        self.rotation.axis().map(|a| a.into_inner())
    }

    /// Translation distance and rotation angle between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let dt = (self.translation - other.translation).norm();
        let dr = self.rotation.angle_to(&other.rotation);
        (dt, dr)
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let inner = q.into_inner();
    // canonical sign keeps serialized output unique
    let inner = if inner.w < 0.0 { -inner } else { inner };
    UnitQuaternion::new_normalize(inner)
}

/// Pinhole intrinsics plus the stereo baseline used by the depth uncertainty model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Stereo baseline in meters.
    pub baseline: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            baseline,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.baseline > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fx={}, fy={}, baseline={} must all be positive",
                self.fx, self.fy, self.baseline
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if p.z <= MIN_DEPTH {
            return Err(GeometryError::NonPositiveDepth(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Unit-z ray through a pixel: `((u-cx)/fx, (v-cy)/fy, 1)`.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Back-projects a pixel with a depth value.
    pub fn back_project(&self, pixel: &Vector2<f64>, depth: f64, kind: DepthKind) -> Vector3<f64> {
        let ray = self.ray(pixel);
        match kind {
            DepthKind::ZDepth => ray * depth,
            DepthKind::Range => ray.normalize() * depth,
        }
    }

    /// Stereo depth standard deviation `(d² / (b f)) σ_p`.
    pub fn depth_sigma(&self, depth: f64, pixel_sigma: f64) -> f64 {
        depth * depth / (self.baseline * self.fx) * pixel_sigma
    }
}

/// How an observed depth value relates to the camera-frame point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKind {
    /// Euclidean distance from the camera center.
    #[default]
    Range,
    /// Coordinate along the optical axis.
    ZDepth,
}

impl DepthKind {
    pub fn measure(&self, p: &Vector3<f64>) -> f64 {
        match self {
            DepthKind::Range => p.norm(),
            DepthKind::ZDepth => p.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: usize,
    pub position: Vector3<f64>,
}

/// Pixel of a world point seen from a camera with pose `camera_to_world`.
pub fn project(
    point: &Vector3<f64>,
    camera_to_world: &Pose,
    k: &CameraIntrinsics,
) -> Result<Vector2<f64>, GeometryError> {
    k.project(&camera_to_world.inverse_transform_point(point))
}

pub fn transform_point(p: &Vector3<f64>, t: &Pose) -> Vector3<f64> {
    t.transform_point(p)
}

/// Transform taking source-cloud (`j`) LiDAR points into the target-cloud (`i`)
/// LiDAR frame: `(T_i T_e)^-1 T_j T_e`.
pub fn relative_cloud_transform(ti: &Pose, tj: &Pose, te: &Pose) -> Pose {
    ti.compose(te).inverse().compose(&tj.compose(te))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn rz(angle: f64) -> Pose {
        Pose::from_axis_angle(Vector3::z() * angle, Vector3::zeros())
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose::from_axis_angle(Vector3::new(0.3, -0.2, 0.1), Vector3::new(1.0, 2.0, 3.0));
        let a = Pose::identity().compose(&p);
        assert_relative_eq!(a.translation(), p.translation(), epsilon = 1e-12);
        assert!(a.rotation().angle_to(p.rotation()) < 1e-12);
        let e = p.compose(&p.inverse());
        assert!(e.translation().norm() < 1e-9);
        assert!(e.angle() < 1e-9);
    }

    #[test]
    fn compose_rz90_translation_then_rz90() {
        let a = Pose::from_axis_angle(Vector3::z() * FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0));
        let c = a.compose(&rz(FRAC_PI_2));
        assert_relative_eq!(c.translation(), &Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(c.angle(), std::f64::consts::PI, epsilon = 1e-12);
        let p = c.transform_point(&Vector3::x());
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn project_on_axis_and_offset() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 0.1).unwrap();
        let u = project(&Vector3::new(0.0, 0.0, 1.0), &Pose::identity(), &k).unwrap();
        assert_relative_eq!(u, Vector2::new(50.0, 50.0));
        let u = project(&Vector3::new(0.1, 0.0, 1.0), &Pose::identity(), &k).unwrap();
        assert_relative_eq!(u, Vector2::new(60.0, 50.0), epsilon = 1e-12);
    }

    #[test]
    fn project_behind_camera_fails() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 0.1).unwrap();
        let err = project(&Vector3::new(0.0, 0.0, -1.0), &Pose::identity(), &k).unwrap_err();
        assert!(matches!(err, GeometryError::NonPositiveDepth(_)));
        assert!(k.project(&Vector3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn transform_point_axis_rotation() {
        assert_relative_eq!(Pose::identity().transform_point(&Vector3::x()), Vector3::x());
        assert_relative_eq!(rz(FRAC_PI_2).transform_point(&Vector3::x()), Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn relative_cloud_transform_special_cases() {
        let ti = Pose::from_axis_angle(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 0.0, 0.5));
        let tj = Pose::from_axis_angle(Vector3::new(-0.2, 0.1, 0.0), Vector3::new(0.0, 1.0, 0.0));
        let te = Pose::from_axis_angle(Vector3::new(0.05, 0.0, -0.1), Vector3::new(0.1, -0.2, 0.05));
        let same = relative_cloud_transform(&ti, &ti, &te);
        assert!(same.translation().norm() < 1e-12 && same.angle() < 1e-12);
        let coincident = relative_cloud_transform(&ti, &tj, &Pose::identity());
        let expect = ti.inverse().compose(&tj);
        let (dt, dr) = coincident.distance(&expect);
        assert!(dt < 1e-12 && dr < 1e-12);
    }

    #[test]
    fn depth_sigma_formula() {
        let k = CameraIntrinsics::new(3000.0, 3000.0, 0.0, 0.0, 0.38).unwrap();
        assert_relative_eq!(k.depth_sigma(5.0, 1.0), 25.0 / 1140.0, epsilon = 1e-15);
        assert_relative_eq!(k.depth_sigma(10.0, 1.0), 4.0 * k.depth_sigma(5.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn back_project_inverts_projection() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 0.2).unwrap();
        let p = Vector3::new(0.3, -0.4, 2.5);
        let u = k.project(&p).unwrap();
        assert_relative_eq!(k.back_project(&u, p.norm(), DepthKind::Range), p, epsilon = 1e-12);
        assert_relative_eq!(k.back_project(&u, p.z, DepthKind::ZDepth), p, epsilon = 1e-12);
    }

    #[test]
    fn pose_json_roundtrip() {
        let p = Pose::from_axis_angle(Vector3::new(0.1, -0.5, 0.2), Vector3::new(1.0, 2.0, -3.0));
        let s = serde_json::to_string(&p).unwrap();
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, -0.1).is_err());
    }
}
