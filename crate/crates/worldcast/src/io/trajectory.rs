//! Camera trajectories as JSON: shared intrinsics plus a pose list.
//!
//! Rotations are stored as 3x3 row-major arrays. On read, a rotation
//! whose orthonormality error is within 1e-6 is snapped to the nearest
//! true rotation (measurement noise tolerance); anything worse, or a
//! reflection, is rejected as [`IoError::NotARotation`].

use super::IoError;
use crate::geometry::{nearest_rotation, Camera, Intrinsics, Pose};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Largest acceptable orthonormality error before a pose is rejected.
pub const EPS_ORTHONORMAL: f64 = 1e-6;

#[derive(Debug, Serialize, Deserialize)]
struct IntrinsicsRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryFile {
    intrinsics: IntrinsicsRecord,
    poses: Vec<PoseRecord>,
}

/// Writes cameras sharing one set of intrinsics.
pub fn write_trajectory(cams: &[Camera], path: &Path) -> Result<(), IoError> {
    let first = cams
        .first()
        .ok_or_else(|| IoError::Invalid("cannot write an empty trajectory".into()))?;
    let k = first.intrinsics;
    if cams.iter().any(|c| c.intrinsics != k) {
        return Err(IoError::Invalid("cameras do not share intrinsics".into()));
    }
    let file = TrajectoryFile {
        intrinsics: IntrinsicsRecord {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        },
        poses: cams
            .iter()
            .map(|c| {
                let r = c.pose.rotation();
                PoseRecord {
                    rotation: [
                        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
                    ],
                    translation: (*c.pose.translation()).into(),
                }
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

/// Reads a trajectory, snapping slightly-off rotations and rejecting
/// badly-off ones.
pub fn read_trajectory(path: &Path) -> Result<Vec<Camera>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let file: TrajectoryFile = serde_json::from_str(&text)?;
    let k = file.intrinsics;
    let intr = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)
        .map_err(|e| IoError::Invalid(e.to_string()))?;
    let mut cams = Vec::with_capacity(file.poses.len());
    for (index, rec) in file.poses.iter().enumerate() {
        let m = Matrix3::from_rows(&[
            Vector3::from(rec.rotation[0]).transpose(),
            Vector3::from(rec.rotation[1]).transpose(),
            Vector3::from(rec.rotation[2]).transpose(),
        ]);
        let gram_err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if gram_err > EPS_ORTHONORMAL || m.determinant() < 0.0 {
            return Err(IoError::NotARotation { index, error: gram_err });
        }
        let r = nearest_rotation(&m).map_err(|e| IoError::Invalid(e.to_string()))?;
        let pose = Pose::new(r, Vector3::from(rec.translation))
            .map_err(|e| IoError::Invalid(e.to_string()))?;
        cams.push(Camera::new(intr, pose));
    }
    Ok(cams)
}
