//! Rigid motions, Euler angles and the pinhole projection that maps model
//! points onto the image plane.
//!
//! The full homogeneous chain `P·S·R·T` collapses to
//! `μ'(x) = f·s·(R x + t) / (R x + t).z`; only the first two components are
//! kept since residuals live in the image plane.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::ecm::Covariance2;
use crate::error::{Error, Result};

/// Model-space point, millimetres.
pub type Point3 = nalgebra::Point3<f64>;
/// Image-plane point, pixels.
pub type Point2 = nalgebra::Point2<f64>;
pub type RotationMatrix = Rotation3<f64>;

/// Smallest admissible camera-frame depth, mm.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Euler angles in radians, composed as `Rz(rz)·Ry(ry)·Rx(rx)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl EulerAngles {
    pub fn new(rx: f64, ry: f64, rz: f64) -> Self {
        Self { rx, ry, rz }
    }

    pub fn from_degrees(deg: [f64; 3]) -> Self {
        Self::new(deg[0].to_radians(), deg[1].to_radians(), deg[2].to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [self.rx.to_degrees(), self.ry.to_degrees(), self.rz.to_degrees()]
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.rx, self.ry, self.rz]
    }

    /// Recovers the angles of a rotation, each in `[-π, π]`.
    pub fn from_rotation(r: &RotationMatrix) -> Self {
        let (rx, ry, rz) = r.euler_angles();
        Self::new(rx, ry, rz)
    }
}

pub fn euler_to_rotation(angles: EulerAngles) -> RotationMatrix {
    Rotation3::from_euler_angles(angles.rx, angles.ry, angles.rz)
}

/// Rotation by `angle` radians about `axis` (normalised internally).
pub fn axis_angle_rotation(axis: Vector3<f64>, angle: f64) -> RotationMatrix {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle)
}

/// Registration parameters: `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    pub fn from_euler(angles: EulerAngles, translation: Vector3<f64>) -> Self {
        Self::new(euler_to_rotation(angles), translation)
    }

    pub fn euler(&self) -> EulerAngles {
        EulerAngles::from_rotation(&self.rotation)
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let m = self.rotation.matrix();
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    /// Builds a transform from row-major entries, re-orthonormalising the
    /// rotation block.
    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self> {
        let m = Matrix3::from_row_slice(&rotation);
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("rotation entries must be finite".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        if ortho > 1e-6 || (m.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "rotation is not orthonormal with det +1 (‖RᵀR − I‖ = {ortho:.2e})"
            )));
        }
        Ok(Self::new(
            Rotation3::from_matrix(&m),
            Vector3::from(translation),
        ))
    }
}

pub fn apply_rigid(p: &Point3, transform: &RigidTransform) -> Point3 {
    transform.rotation * p + transform.translation
}

/// Fixed projection constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub focal_mm: f64,
    pub scale_mm_per_pixel: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { focal_mm: 1016.0, scale_mm_per_pixel: 0.175 }
    }
}

impl CameraModel {
    pub fn new(focal_mm: f64, scale_mm_per_pixel: f64) -> Result<Self> {
        let cam = Self { focal_mm, scale_mm_per_pixel };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_mm > 0.0 && self.focal_mm.is_finite()) {
            return Err(Error::InvalidConfig(format!("focal_mm must be > 0, got {}", self.focal_mm)));
        }
        if !(self.scale_mm_per_pixel > 0.0 && self.scale_mm_per_pixel.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale_mm_per_pixel must be > 0, got {}",
                self.scale_mm_per_pixel
            )));
        }
        Ok(())
    }

    /// `f·s`, the combined magnification.
    #[inline]
    pub fn factor(&self) -> f64 {
        self.focal_mm * self.scale_mm_per_pixel
    }

    /// Projects a point already expressed in camera coordinates.
    #[inline]
    pub fn project_camera_point(&self, pc: &Point3) -> Result<Point2> {
        if pc.z.abs() <= DEPTH_EPSILON {
            return Err(Error::DegenerateDepth { depth: pc.z });
        }
        let k = self.factor() / pc.z;
        Ok(Point2::new(k * pc.x, k * pc.y))
    }

    /// Lifts an image point onto its viewing ray at camera depth `depth`.
    #[inline]
    pub fn back_project(&self, y: &Point2, depth: f64) -> Point3 {
        let k = depth / self.factor();
        Point3::new(y.x * k, y.y * k, depth)
    }
}

pub fn perspective_project(p: &Point3, transform: &RigidTransform, cam: &CameraModel) -> Result<Point2> {
    cam.project_camera_point(&apply_rigid(p, transform))
}

/// Projects every model point, requiring each to lie strictly in front of the
/// camera. Returns `None` as soon as one does not.
pub fn project_in_front(
    model: &[Point3],
    transform: &RigidTransform,
    cam: &CameraModel,
    out: &mut Vec<Point2>,
) -> Option<()> {
    out.clear();
    let k = cam.factor();
    for p in model {
        let pc = apply_rigid(p, transform);
        if pc.z <= DEPTH_EPSILON {
            return None;
        }
        out.push(Point2::new(k * pc.x / pc.z, k * pc.y / pc.z));
    }
    Some(())
}

/// Projects all model points, failing with the first degenerate depth.
pub fn project_all(model: &[Point3], transform: &RigidTransform, cam: &CameraModel) -> Result<Vec<Point2>> {
    let mut out = Vec::with_capacity(model.len());
    if project_in_front(model, transform, cam, &mut out).is_some() {
        return Ok(out);
    }
    let depth = model
        .iter()
        .map(|p| apply_rigid(p, transform).z)
        .find(|z| *z <= DEPTH_EPSILON)
        .unwrap_or(0.0);
    Err(Error::DegenerateDepth { depth })
}

/// `(a − b)ᵀ Σ⁻¹ (a − b)`.
#[inline]
pub fn mahalanobis_sq(a: &Point2, b: &Point2, cov: &Covariance2) -> f64 {
    cov.quadratic_form(&(a - b))
}

#[inline]
pub fn residual(a: &Point2, b: &Point2) -> Vector2<f64> {
    a - b
}

/// Squared Frobenius norm of `R1 − R2`.
pub fn rotation_distance_sq(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    (r1.matrix() - r2.matrix()).norm_squared()
}
