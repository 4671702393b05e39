//! Pinhole camera algebra: projection, unprojection, relative poses, and
//! Plücker ray maps.
//!
//! Conventions: right-handed coordinates, +z forward in the camera frame,
//! world-to-camera extrinsics (`X_cam = R·X_world + t`, COLMAP-style).
//! Pixel `(row, col)` has its center at continuous position
//! `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array3;

use crate::{Error, Result};

/// Tolerance for rotation orthonormality checks.
pub const ROTATION_TOL: f64 = 1e-6;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Validation(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Validation("image dimensions must be positive".into()));
        }
        if !(0.0 <= cx && cx < width as f64 && 0.0 <= cy && cy < height as f64) {
            return Err(Error::Validation(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// World-to-camera rigid pose: `X_cam = R·X_world + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Max abs entry of `RᵀR − I`.
fn orthonormality_drift(rotation: &Matrix3<f64>) -> f64 {
    let diff = rotation.transpose() * rotation - Matrix3::identity();
    diff.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("pose has non-finite entries".into()));
        }
        let drift = orthonormality_drift(&rotation);
        if drift > ROTATION_TOL {
            return Err(Error::Validation(format!(
                "rotation is not orthonormal (drift {drift:.2e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Validation(format!(
                "rotation determinant {} is not +1",
                rotation.determinant()
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    /// Re-orthonormalize a slightly drifted rotation via SVD, rejecting
    /// inputs whose drift exceeds `max_drift` or that are reflections.
    pub fn new_reorthonormalized(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        max_drift: f64,
    ) -> Result<Self> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("pose has non-finite entries".into()));
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::Validation(format!(
                "rotation determinant {} is not positive",
                rotation.determinant()
            )));
        }
        let drift = orthonormality_drift(&rotation);
        if drift > max_drift {
            return Err(Error::Validation(format!(
                "rotation drift {drift:.2e} exceeds the {max_drift:.2e} limit"
            )));
        }
        let svd = rotation.svd(true, true);
        let u = svd.u.expect("svd with u");
        let v_t = svd.v_t.expect("svd with v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the smallest singular direction to stay in SO(3).
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Pose::new(r, translation)
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// World point into the camera frame.
    pub fn transform(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    /// Camera point back into the world frame.
    pub fn inverse_transform(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Camera center in world coordinates: `−Rᵀ·t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn inverse(&self) -> Pose {
        Pose {
            rotation: self.rotation.transpose(),
            translation: -(self.rotation.transpose() * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Pose with translation multiplied by a factor (scene re-scaling).
    pub fn with_scaled_translation(&self, factor: f64) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation * factor,
        }
    }
}

/// Relative pose taking camera-i coordinates to camera-j coordinates:
/// `pose_j ∘ pose_i⁻¹`.
pub fn relative_pose(pose_i: &Pose, pose_j: &Pose) -> Pose {
    pose_j.compose(&pose_i.inverse())
}

/// A camera-frame point projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    /// Continuous pixel position `(u, v)`; pixel `(row, col)` has center
    /// `(col + 0.5, row + 0.5)`.
    pub pixel: [f64; 2],
    /// Camera-space depth (the z coordinate).
    pub depth: f64,
}

/// Project a camera-frame point. `None` flags points at or behind the
/// camera plane (z ≤ 0); callers filter rather than error.
pub fn project(point_cam: &Vector3<f64>, k: &Intrinsics) -> Option<Projected> {
    let z = point_cam.z;
    if z <= 0.0 {
        return None;
    }
    Some(Projected {
        pixel: [k.fx * point_cam.x / z + k.cx, k.fy * point_cam.y / z + k.cy],
        depth: z,
    })
}

/// Unproject a continuous pixel position at a given depth into the camera
/// frame. Depth must be positive.
pub fn unproject(pixel: [f64; 2], depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::Validation(format!(
            "unproject needs positive depth, got {depth}"
        )));
    }
    Ok(Vector3::new(
        (pixel[0] - k.cx) / k.fx * depth,
        (pixel[1] - k.cy) / k.fy * depth,
        depth,
    ))
}

/// Dense 6-channel Plücker ray map `(o×d, d)` with unit directions, laid
/// out channel-first as `(6, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    pub channels: Array3<f64>,
}

impl PluckerMap {
    pub fn height(&self) -> usize {
        self.channels.dim().1
    }

    pub fn width(&self) -> usize {
        self.channels.dim().2
    }
}

/// Per-pixel Plücker embedding of a camera: rays through pixel centers,
/// direction unit-normalized in world space, moment taken about the world
/// origin with `o` the camera center.
pub fn plucker_map(k: &Intrinsics, pose: &Pose) -> PluckerMap {
    let origin = pose.camera_center();
    let r_t = pose.rotation().transpose();
    let mut channels = Array3::zeros((6, k.height, k.width));
    for row in 0..k.height {
        let v = row as f64 + 0.5;
        for col in 0..k.width {
            let u = col as f64 + 0.5;
            let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalize();
            let dir = r_t * dir_cam;
            let moment = origin.cross(&dir);
            for i in 0..3 {
                channels[[i, row, col]] = moment[i];
                channels[[3 + i, row, col]] = dir[i];
            }
        }
    }
    PluckerMap { channels }
}
