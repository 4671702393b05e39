//! Multi-view scene container and global scene-scale normalization.

use nalgebra::Vector3;
use ndarray::Array3;

use crate::camera::{Intrinsics, Pose};
use crate::depth::{DepthMap, SparseDepthSamples};
use crate::{Error, Result};

/// One camera with optional image/depth/sparse-sample attachments.
#[derive(Debug, Clone)]
pub struct View {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    /// RGB image, channel-first `(3, height, width)`, unit range.
    pub image: Option<Array3<f64>>,
    pub depth: Option<DepthMap>,
    pub samples: Option<SparseDepthSamples>,
}

impl View {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        View {
            intrinsics,
            pose,
            image: None,
            depth: None,
            samples: None,
        }
    }
}

/// An ordered set of views with disjoint reference/target roles.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub views: Vec<View>,
    pub reference_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

impl Scene {
    pub fn new(
        id: impl Into<String>,
        views: Vec<View>,
        reference_indices: Vec<usize>,
        target_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = views.len();
        for &i in reference_indices.iter().chain(target_indices.iter()) {
            if i >= n {
                return Err(Error::Validation(format!(
                    "view index {i} out of range for {n} views"
                )));
            }
        }
        if reference_indices.is_empty() {
            return Err(Error::Validation("a scene needs at least one reference view".into()));
        }
        for &r in &reference_indices {
            if target_indices.contains(&r) {
                return Err(Error::Validation(format!(
                    "view {r} is both reference and target"
                )));
            }
        }
        let mut seen = vec![false; n];
        for &i in reference_indices.iter().chain(target_indices.iter()) {
            if seen[i] {
                return Err(Error::Validation(format!("view index {i} listed twice")));
            }
            seen[i] = true;
        }
        Ok(Scene {
            id: id.into(),
            views,
            reference_indices,
            target_indices,
        })
    }

    pub fn view(&self, index: usize) -> &View {
        &self.views[index]
    }

    fn camera_centers(&self) -> Vec<Vector3<f64>> {
        self.views.iter().map(|v| v.pose.camera_center()).collect()
    }

    /// Largest distance between any two camera centers, 0 for a single view.
    pub fn max_camera_distance(&self) -> f64 {
        let centers = self.camera_centers();
        let mut max = 0.0f64;
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                max = max.max((centers[i] - centers[j]).norm());
            }
        }
        max
    }
}

/// Default bound on the scene extent (the longest camera-to-camera
/// distance) after normalization.
pub const DEFAULT_MAX_EXTENT: f64 = 5.0;

/// Slack that makes re-normalizing an already-normalized scene a no-op
/// despite rounding in the recomputed extent.
const EXTENT_SLACK: f64 = 1e-12;

/// Rescale the scene so the longest camera-to-camera distance is at most
/// `max_extent`. When the extent already fits, the scene is returned
/// unchanged with scale 1. Translations, attached depth maps, and sparse
/// sample depths scale jointly; rotations and intrinsics are untouched, so
/// warping results are unaffected.
pub fn normalize_scene(scene: Scene, max_extent: f64) -> Result<(Scene, f64)> {
    if !(max_extent > 0.0 && max_extent.is_finite()) {
        return Err(Error::Validation(format!(
            "max extent must be positive, got {max_extent}"
        )));
    }
    let distance = scene.max_camera_distance();
    if distance <= max_extent * (1.0 + EXTENT_SLACK) {
        return Ok((scene, 1.0));
    }
    let scale = max_extent / distance;
    let mut scene = scene;
    for view in &mut scene.views {
        view.pose = view.pose.with_scaled_translation(scale);
        if let Some(depth) = &view.depth {
            view.depth = Some(depth.scaled(scale));
        }
        if let Some(samples) = &view.samples {
            view.samples = Some(samples.scaled(scale));
        }
    }
    Ok((scene, scale))
}
