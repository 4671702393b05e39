//! Scene manifest loading and validation.
//!
//! A manifest is one JSON document per scene listing the per-view camera
//! parameters and attachment paths (relative to the manifest's directory),
//! the reference/target split, and optional pipeline configuration. Field
//! names are documented in `docs/FORMATS.md`.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, Pose};
use crate::io::{read_image_rgb, read_pfm, read_samples_csv};
use crate::scene::{Scene, View};
use crate::{Error, Result};

/// Rotations whose orthonormality drift is at or below this are
/// re-orthonormalized on load; anything worse is rejected.
pub const ROTATION_DRIFT_LIMIT: f64 = 1e-4;

/// Optional pipeline configuration overrides; unset fields fall back to the
/// defaults or to outer configuration layers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub ransac_iterations: Option<usize>,
    pub ransac_tau: Option<f64>,
    pub seed: Option<u64>,
    pub fourier_levels: Option<usize>,
    pub gamma: Option<f64>,
    pub gamma_threshold: Option<usize>,
    pub max_extent: Option<f64>,
    /// "HEIGHTxWIDTH", e.g. "512x512"; must name a bucket-table entry.
    pub bucket: Option<String>,
    pub skip_align: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    #[serde(default)]
    pub image: Option<String>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 3×3 world-to-camera rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    #[serde(default)]
    pub depth: Option<String>,
    #[serde(default)]
    pub sparse: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub scene_id: String,
    pub reference_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
    #[serde(default)]
    pub config: Option<PartialConfig>,
    pub views: Vec<ViewRecord>,
}

fn manifest_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parse a manifest and check that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<SceneManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| manifest_error(path, format!("cannot read: {e}")))?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| manifest_error(path, format!("malformed JSON: {e}")))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    for (i, view) in manifest.views.iter().enumerate() {
        for (kind, rel) in [
            ("image", &view.image),
            ("depth", &view.depth),
            ("sparse", &view.sparse),
        ] {
            if let Some(rel) = rel {
                let full = dir.join(rel);
                if !full.exists() {
                    return Err(manifest_error(
                        path,
                        format!("view {i}: {kind} file {} does not exist", full.display()),
                    ));
                }
            }
        }
    }
    Ok(manifest)
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

/// Load and fully validate a scene: cameras built (rotations with drift at
/// most [`ROTATION_DRIFT_LIMIT`] re-orthonormalized), attachments read, and
/// every error annotated with the offending view index.
pub fn load_scene(path: &Path) -> Result<(Scene, Option<PartialConfig>)> {
    let manifest = load_manifest(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    let mut views = Vec::with_capacity(manifest.views.len());
    for (i, record) in manifest.views.iter().enumerate() {
        let intrinsics = Intrinsics::new(
            record.fx,
            record.fy,
            record.cx,
            record.cy,
            record.width,
            record.height,
        )
        .map_err(|e| manifest_error(path, format!("view {i}: {e}")))?;
        let rotation = Matrix3::from_row_slice(&record.rotation);
        let translation = Vector3::from_column_slice(&record.translation);
        let pose = Pose::new_reorthonormalized(rotation, translation, ROTATION_DRIFT_LIMIT)
            .map_err(|e| manifest_error(path, format!("view {i}: {e}")))?;

        let mut view = View::new(intrinsics, pose);
        if let Some(rel) = &record.image {
            let img = read_image_rgb(&resolve(dir, rel))
                .map_err(|e| manifest_error(path, format!("view {i}: image: {e}")))?;
            let (_, h, w) = img.dim();
            if (h, w) != (record.height, record.width) {
                return Err(manifest_error(
                    path,
                    format!(
                        "view {i}: image is {h}x{w} but the manifest says {}x{}",
                        record.height, record.width
                    ),
                ));
            }
            view.image = Some(img);
        }
        if let Some(rel) = &record.depth {
            let depth = read_pfm(&resolve(dir, rel))
                .map_err(|e| manifest_error(path, format!("view {i}: depth: {e}")))?;
            if (depth.height(), depth.width()) != (record.height, record.width) {
                return Err(manifest_error(
                    path,
                    format!(
                        "view {i}: depth is {}x{} but the manifest says {}x{}",
                        depth.height(),
                        depth.width(),
                        record.height,
                        record.width
                    ),
                ));
            }
            view.depth = Some(depth);
        }
        if let Some(rel) = &record.sparse {
            let samples = read_samples_csv(&resolve(dir, rel))
                .map_err(|e| manifest_error(path, format!("view {i}: sparse: {e}")))?;
            for s in samples.iter() {
                if s.row >= record.height || s.col >= record.width {
                    return Err(manifest_error(
                        path,
                        format!(
                            "view {i}: sparse sample at ({}, {}) outside {}x{}",
                            s.row, s.col, record.height, record.width
                        ),
                    ));
                }
            }
            view.samples = Some(samples);
        }
        views.push(view);
    }

    let scene = Scene::new(
        manifest.scene_id.clone(),
        views,
        manifest.reference_indices.clone(),
        manifest.target_indices.clone(),
    )
    .map_err(|e| manifest_error(path, e.to_string()))?;
    Ok((scene, manifest.config))
}
