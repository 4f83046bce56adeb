//! Pinhole cameras and rigid transforms.
//!
//! Conventions used everywhere in this crate: camera frame has +z forward,
//! +x right, +y down; pixel (0, 0) is the *center* of the top-left pixel;
//! no lens distortion. Poses map world coordinates into the camera frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 3D point in world or camera coordinates.
pub type Point3 = Vector3<f64>;

/// Points closer than this to the camera plane cannot be projected.
pub const EPS_DEPTH: f64 = 1e-6;

/// Tolerance for rotation-matrix orthonormality at construction.
pub const EPS_ROTATION: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point depth {0} is behind or too close to the camera plane")]
    NotInFront(f64),
    #[error("depth {0} is not a positive finite number")]
    BadDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("matrix is not a rotation: {0}")]
    InvalidRotation(String),
}

/// Pinhole intrinsics plus the image size they target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Symmetric intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        Self::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }
}

/// Rigid world-to-camera transform: `p_cam = R * p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting rotation matrices that are not orthonormal
    /// with determinant +1 within [`EPS_ROTATION`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if err > EPS_ROTATION {
            return Err(GeometryError::InvalidRotation(format!(
                "orthonormality error {err:.3e} exceeds {EPS_ROTATION:.0e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > EPS_ROTATION {
            return Err(GeometryError::InvalidRotation(format!(
                "determinant {det} is not +1"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Pose with identity rotation and the given translation.
    pub fn translated(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Applies the transform: world point to camera frame.
    pub fn transform(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Inverse transform as a pose (camera frame back to world).
    pub fn invert(&self) -> Self {
        let rot = self.rotation.transpose();
        Self { rotation: rot, translation: -(rot * self.translation) }
    }

    /// `self.compose(other)` applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates (`-R^T t`).
    pub fn center(&self) -> Point3 {
        -(self.rotation.transpose() * self.translation)
    }
}

/// A posed pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }
}

/// World point into the camera frame.
pub fn transform_to_camera(p: &Point3, pose: &Pose) -> Point3 {
    pose.transform(p)
}

/// Projects a world point to continuous pixel coordinates and depth.
///
/// Returns `(u, v, depth)` where depth is the camera-frame z coordinate.
/// Fails with `NotInFront` when the point is behind the camera or within
/// [`EPS_DEPTH`] of its plane.
pub fn project(p: &Point3, cam: &Camera) -> Result<(f64, f64, f64), GeometryError> {
    let pc = cam.pose.transform(p);
    if pc.z <= EPS_DEPTH {
        return Err(GeometryError::NotInFront(pc.z));
    }
    let k = &cam.intrinsics;
    let u = k.fx * (pc.x / pc.z) + k.cx;
    let v = k.fy * (pc.y / pc.z) + k.cy;
    Ok((u, v, pc.z))
}

/// Lifts a pixel and depth back to a world point. Exact inverse of
/// [`project`] for positive finite depths.
pub fn backproject(u: f64, v: f64, depth: f64, cam: &Camera) -> Result<Point3, GeometryError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeometryError::BadDepth(depth));
    }
    let k = &cam.intrinsics;
    let pc = Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    Ok(cam.pose.invert().transform(&pc))
}

/// Nearest rotation matrix to `m` in the Frobenius sense, via polar
/// decomposition. Always lands in SO(3); callers that must reject
/// reflections should test `m.determinant()` first.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| GeometryError::InvalidRotation("svd failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| GeometryError::InvalidRotation("svd failed".into()))?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Flip the singular direction with the smallest singular value.
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    Ok(r)
}

/// Rotation about +z by `angle` radians (right-handed: +x toward +y).
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation about +y by `angle` radians (right-handed: +z toward +x).
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about +x by `angle` radians (right-handed: +y toward +z).
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}
