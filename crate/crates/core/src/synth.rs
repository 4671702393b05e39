//! Synthetic test scenes with exactly consistent geometry.
//!
//! The generated scene is a stack of fronto-parallel horizontal strips at
//! two alternating depths, textured procedurally in world coordinates.
//! Cameras share intrinsics, have identity rotations, and differ only by a
//! horizontal offset; under that restriction every camera sees the same
//! strip through the same image row, so the rendered images, depth maps,
//! and sparse samples are mutually consistent to floating-point precision.
//! The depth values are chosen dyadic so 32-bit storage and the depth
//! alignment round-trip are exact.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};

use crate::camera::{Intrinsics, Pose};
use crate::depth::{DepthMap, DepthSample, SparseDepthSamples};
use crate::io::{rgb_to_image, write_png, write_pfm, write_samples_csv};
use crate::manifest::{SceneManifest, ViewRecord};
use crate::scene::{Scene, View};
use crate::Result;

#[derive(Debug, Clone)]
pub struct BandSceneParams {
    pub width: usize,
    pub height: usize,
    /// Rows per constant-depth band.
    pub band_rows: usize,
    pub near_depth: f64,
    pub far_depth: f64,
    pub focal: f64,
    /// Camera-center x offset per reference view.
    pub reference_offsets: Vec<f64>,
    /// Append a target view sharing the first reference camera, with the
    /// reference render attached as ground truth.
    pub include_identity_target: bool,
    /// Monocular depth is stored as `(metric − shift) / scale`, so
    /// alignment should recover exactly this scale/shift pair.
    pub mono_scale: f64,
    pub mono_shift: f64,
    pub sample_count: usize,
    /// Attach metric depth directly instead of the monocular map
    /// (for skip-align runs).
    pub metric_depth: bool,
}

impl Default for BandSceneParams {
    fn default() -> Self {
        BandSceneParams {
            width: 512,
            height: 512,
            band_rows: 64,
            near_depth: 2.0,
            far_depth: 2.5,
            focal: 400.0,
            reference_offsets: vec![0.0, 0.3],
            include_identity_target: true,
            mono_scale: 2.0,
            mono_shift: 0.25,
            // A power of two keeps the least-squares means exact on the
            // dyadic depth values, so alignment recovers scale/shift bitwise.
            sample_count: 64,
            metric_depth: false,
        }
    }
}

impl BandSceneParams {
    fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(
            self.focal,
            self.focal,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
        )
        .expect("valid synthetic intrinsics")
    }

    fn band_depth(&self, row: usize) -> f64 {
        if (row / self.band_rows) % 2 == 0 {
            self.near_depth
        } else {
            self.far_depth
        }
    }

    /// Pose of a camera centered at `(x, 0, 0)` looking down +z.
    fn pose_at(&self, x: f64) -> Pose {
        Pose::new(Matrix3::identity(), Vector3::new(-x, 0.0, 0.0)).expect("identity rotation")
    }
}

/// Procedural world-anchored texture, quantized to 8 bits.
fn texture(wx: f64, wy: f64) -> [u8; 3] {
    let q = |v: f64| ((0.5 + 0.45 * v.sin()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [
        q(3.1 * wx + 1.7 * wy),
        q(2.3 * wx - 1.1 * wy + 1.0),
        q(1.3 * wx + 2.9 * wy + 2.0),
    ]
}

/// Render one camera: 8-bit-quantized RGB (returned as unit-range floats on
/// the 8-bit grid, matching a PNG round trip) plus the metric depth map.
fn render(params: &BandSceneParams, center_x: f64) -> (Array3<f64>, DepthMap) {
    let k = params.intrinsics();
    let mut rgb = Array3::zeros((3, params.height, params.width));
    let mut depth = Array2::zeros((params.height, params.width));
    for row in 0..params.height {
        let z = params.band_depth(row);
        let wy = (row as f64 + 0.5 - k.cy) / k.fy * z;
        for col in 0..params.width {
            let wx = center_x + (col as f64 + 0.5 - k.cx) / k.fx * z;
            let color = texture(wx, wy);
            for c in 0..3 {
                rgb[[c, row, col]] = color[c] as f64 / 255.0;
            }
            depth[[row, col]] = z;
        }
    }
    (rgb, DepthMap::new(depth))
}

fn mono_from_metric(params: &BandSceneParams, metric: &DepthMap) -> DepthMap {
    // Round-trip through f32 so the in-memory scene matches a PFM reload.
    let values = metric
        .values()
        .map(|&z| ((z - params.mono_shift) / params.mono_scale) as f32 as f64);
    DepthMap::new(values)
}

fn sample_pixels(params: &BandSceneParams) -> Vec<(usize, usize)> {
    (0..params.sample_count)
        .map(|i| ((i * 37 + 11) % params.height, (i * 53 + 29) % params.width))
        .collect()
}

fn sparse_samples(params: &BandSceneParams) -> SparseDepthSamples {
    SparseDepthSamples::new(
        sample_pixels(params)
            .into_iter()
            .map(|(row, col)| DepthSample {
                row,
                col,
                depth: params.band_depth(row),
            })
            .collect(),
    )
    .expect("positive synthetic depths")
}

/// Build the scene in memory.
pub fn generate(params: &BandSceneParams) -> Scene {
    let k = params.intrinsics();
    let mut views = Vec::new();
    for &offset in &params.reference_offsets {
        let (rgb, metric) = render(params, offset);
        let mut view = View::new(k, params.pose_at(offset));
        view.image = Some(rgb);
        view.depth = Some(if params.metric_depth {
            metric
        } else {
            mono_from_metric(params, &metric)
        });
        view.samples = Some(sparse_samples(params));
        views.push(view);
    }
    let reference_indices: Vec<usize> = (0..views.len()).collect();
    let mut target_indices = Vec::new();
    if params.include_identity_target {
        let (rgb, _) = render(params, params.reference_offsets[0]);
        let mut target = View::new(k, params.pose_at(params.reference_offsets[0]));
        target.image = Some(rgb);
        target_indices.push(views.len());
        views.push(target);
    }
    Scene::new("band-scene", views, reference_indices, target_indices).expect("valid synth scene")
}

/// Write the scene as a manifest directory (PNG images, PFM depth, CSV
/// samples) and return the manifest path.
pub fn write_fixture(dir: &Path, params: &BandSceneParams) -> Result<PathBuf> {
    let k = params.intrinsics();
    let mut records = Vec::new();
    let mut reference_indices = Vec::new();
    for (i, &offset) in params.reference_offsets.iter().enumerate() {
        let (rgb, metric) = render(params, offset);
        let image_name = format!("view{i}.png");
        let depth_name = format!("view{i}_depth.pfm");
        let sparse_name = format!("view{i}_sparse.csv");
        write_png(&dir.join(&image_name), &rgb_to_image(&rgb, None))?;
        let stored = if params.metric_depth {
            metric
        } else {
            mono_from_metric(params, &metric)
        };
        write_pfm(&dir.join(&depth_name), &stored)?;
        write_samples_csv(&dir.join(&sparse_name), &sparse_samples(params))?;
        let pose = params.pose_at(offset);
        records.push(ViewRecord {
            image: Some(image_name),
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation: {
                let r = pose.rotation();
                [
                    r[(0, 0)], r[(0, 1)], r[(0, 2)],
                    r[(1, 0)], r[(1, 1)], r[(1, 2)],
                    r[(2, 0)], r[(2, 1)], r[(2, 2)],
                ]
            },
            translation: {
                let t = pose.translation();
                [t.x, t.y, t.z]
            },
            depth: Some(depth_name),
            sparse: Some(sparse_name),
        });
        reference_indices.push(i);
    }

    let mut target_indices = Vec::new();
    if params.include_identity_target {
        let (rgb, _) = render(params, params.reference_offsets[0]);
        write_png(&dir.join("target.png"), &rgb_to_image(&rgb, None))?;
        let mut record = records[0].clone();
        record.image = Some("target.png".into());
        record.depth = None;
        record.sparse = None;
        target_indices.push(records.len());
        records.push(record);
    }

    let manifest = SceneManifest {
        scene_id: "band-scene".into(),
        reference_indices,
        target_indices,
        config: None,
        views: records,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BandSceneParams {
        BandSceneParams {
            width: 32,
            height: 32,
            band_rows: 8,
            focal: 30.0,
            sample_count: 20,
            ..BandSceneParams::default()
        }
    }

    #[test]
    fn renders_are_consistent_across_cameras() {
        // A world point on a strip must project to matching colors in both
        // reference renders.
        let params = small();
        let scene = generate(&params);
        let a = scene.views[0].image.as_ref().unwrap();
        let b = scene.views[1].image.as_ref().unwrap();
        let k = params.intrinsics();
        // For row 4 (near band) pick a source column in view 1 and find the
        // world point; view 0 must show the same texture at its projection.
        let row = 4usize;
        let z = params.band_depth(row);
        for col in 8..24 {
            let wx = 0.3 + (col as f64 + 0.5 - k.cx) / k.fx * z;
            let u0 = k.fx * wx / z + k.cx;
            if !(0.0..params.width as f64).contains(&u0) || u0.fract() != 0.5 {
                continue;
            }
            let col0 = u0.floor() as usize;
            for c in 0..3 {
                assert_eq!(b[[c, row, col]], a[[c, row, col0]]);
            }
        }
    }

    #[test]
    fn mono_depth_is_exactly_affine() {
        let params = small();
        let scene = generate(&params);
        let mono = scene.views[0].depth.as_ref().unwrap();
        for row in 0..params.height {
            let z = params.band_depth(row);
            let expected = (z - params.mono_shift) / params.mono_scale;
            assert_eq!(mono.values()[[row, 0]], expected);
            assert_eq!(expected * params.mono_scale + params.mono_shift, z);
        }
    }

    #[test]
    fn samples_cover_both_bands() {
        let params = small();
        let samples = sparse_samples(&params);
        let depths: std::collections::BTreeSet<u64> =
            samples.iter().map(|s| s.depth.to_bits()).collect();
        assert_eq!(depths.len(), 2);
    }

    #[test]
    fn fixture_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let params = small();
        let manifest = write_fixture(dir.path(), &params).unwrap();
        let (loaded, _) = crate::manifest::load_scene(&manifest).unwrap();
        let generated = generate(&params);
        assert_eq!(loaded.views.len(), generated.views.len());
        for (a, b) in loaded.views.iter().zip(generated.views.iter()) {
            assert_eq!(a.image, b.image);
            match (&a.depth, &b.depth) {
                (Some(x), Some(y)) => {
                    assert_eq!(x.values(), y.values());
                    assert_eq!(x.mask(), y.mask());
                }
                (None, None) => {}
                _ => panic!("depth attachment mismatch"),
            }
            assert_eq!(a.samples, b.samples);
        }
    }
}
