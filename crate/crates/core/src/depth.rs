//! Metric depth maps and RANSAC alignment of monocular depth against sparse
//! SfM/MVS observations.
//!
//! Monocular depth predictions are correct only up to an affine transform.
//! [`align_depth`] recovers the scale/shift pair `(r, s)` such that
//! `metric ≈ mono · r + s`, robust to outliers in the sparse observations,
//! with a minimal-slope constraint `r ≥ 0.1 · std(sparse) / std(mono)` that
//! prevents collapse to the trivial constant solution.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Per-pixel depth with a validity mask. Valid entries are finite and
/// strictly positive; everything else is masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl DepthMap {
    /// Build a map from raw values; the mask marks finite, positive entries.
    pub fn new(values: Array2<f64>) -> Self {
        let mask = values.map(|&v| v.is_finite() && v > 0.0);
        DepthMap { values, mask }
    }

    /// Build from values plus an explicit mask. Masked-in entries must be
    /// finite and positive.
    pub fn from_parts(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::Validation(format!(
                "depth/mask shape mismatch: {:?} vs {:?}",
                values.dim(),
                mask.dim()
            )));
        }
        for ((r, c), &m) in mask.indexed_iter() {
            let v = values[[r, c]];
            if m && !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!(
                    "depth at ({r}, {c}) marked valid but is {v}"
                )));
            }
        }
        Ok(DepthMap { values, mask })
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    /// Depth at a pixel, or `None` when out of bounds or invalid.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if row < self.height() && col < self.width() && self.mask[[row, col]] {
            Some(self.values[[row, col]])
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// All values multiplied by a positive factor; the mask is unchanged.
    pub fn scaled(&self, factor: f64) -> DepthMap {
        DepthMap {
            values: &self.values * factor,
            mask: self.mask.clone(),
        }
    }
}

/// One pixel-anchored metric depth observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub row: usize,
    pub col: usize,
    pub depth: f64,
}

/// Sparse metric depth observations for one view, e.g. projected SfM points.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthSamples {
    samples: Vec<DepthSample>,
}

impl SparseDepthSamples {
    pub fn new(samples: Vec<DepthSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !(s.depth.is_finite() && s.depth > 0.0) {
                return Err(Error::Validation(format!(
                    "sparse sample {i} has non-positive depth {}",
                    s.depth
                )));
            }
        }
        Ok(SparseDepthSamples { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DepthSample> {
        self.samples.iter()
    }

    pub fn as_slice(&self) -> &[DepthSample] {
        &self.samples
    }

    /// Depths multiplied by a positive factor (scene re-scaling).
    pub fn scaled(&self, factor: f64) -> SparseDepthSamples {
        SparseDepthSamples {
            samples: self
                .samples
                .iter()
                .map(|s| DepthSample {
                    depth: s.depth * factor,
                    ..*s
                })
                .collect(),
        }
    }
}

/// RANSAC configuration for [`align_depth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Number of 2-point hypotheses to try.
    pub iterations: usize,
    /// Relative inlier threshold: a sample is an inlier when
    /// `|r·mono + s − depth| ≤ tau · depth`.
    pub inlier_tau: f64,
    /// Factor of the minimal-slope bound `r ≥ factor · std(sparse)/std(mono)`.
    pub min_slope_factor: f64,
    /// RNG seed; a fixed seed gives a bit-identical result.
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 1000,
            inlier_tau: 0.05,
            min_slope_factor: 0.1,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Validation("ransac iterations must be ≥ 1".into()));
        }
        if !(self.inlier_tau > 0.0 && self.inlier_tau.is_finite()) {
            return Err(Error::Validation(format!(
                "ransac inlier tau must be positive, got {}",
                self.inlier_tau
            )));
        }
        if !(self.min_slope_factor >= 0.0 && self.min_slope_factor.is_finite()) {
            return Err(Error::Validation(format!(
                "min slope factor must be non-negative, got {}",
                self.min_slope_factor
            )));
        }
        Ok(())
    }
}

/// Outcome of [`align_depth`]: `metric = mono · scale + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Recovered scale `r`.
    pub scale: f64,
    /// Recovered shift `s`, in scene units.
    pub shift: f64,
    /// Inliers of the winning hypothesis.
    pub inlier_count: usize,
    /// True when the least-squares slope fell below the minimal-slope bound
    /// and was clamped to it.
    pub clamped: bool,
    /// Inlier flags over the *input* sample list; samples at invalid mono
    /// pixels are never inliers.
    pub inlier_mask: Vec<bool>,
    /// True when fewer than half of the usable samples were inliers. The
    /// best hypothesis is still returned so the pipeline can proceed.
    pub low_inlier: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn std_pop(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Least-squares line fit `d = r·mono + s`. Returns `None` when the mono
/// values have no spread.
fn fit_line(mono: &[f64], depth: &[f64]) -> Option<(f64, f64)> {
    let m_mono = mean(mono);
    let m_depth = mean(depth);
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, d) in mono.iter().zip(depth.iter()) {
        num += (x - m_mono) * (d - m_depth);
        den += (x - m_mono) * (x - m_mono);
    }
    if den == 0.0 {
        return None;
    }
    let r = num / den;
    Some((r, m_depth - r * m_mono))
}

/// Align a monocular depth map to metric scale against sparse observations.
///
/// RANSAC over 2-point line hypotheses maximizes inlier count; the winner is
/// refit by least squares on its inlier set. If the refit slope falls below
/// `min_slope_factor · std(sparse)/std(mono)` (population standard deviations
/// over the usable sample locations), the slope is clamped to that bound and
/// the shift refit with the slope fixed.
pub fn align_depth(
    mono: &DepthMap,
    samples: &SparseDepthSamples,
    params: &RansacParams,
) -> Result<AlignmentResult> {
    params.validate()?;

    // Usable samples: in-bounds with valid mono depth underneath.
    let mut usable_idx = Vec::new();
    let mut mono_vals = Vec::new();
    let mut depth_vals = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.row >= mono.height() || s.col >= mono.width() {
            return Err(Error::Validation(format!(
                "sparse sample {i} at ({}, {}) outside the {}x{} depth map",
                s.row,
                s.col,
                mono.height(),
                mono.width()
            )));
        }
        if let Some(v) = mono.get(s.row, s.col) {
            usable_idx.push(i);
            mono_vals.push(v);
            depth_vals.push(s.depth);
        }
    }
    let n = usable_idx.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "alignment needs ≥ 2 samples at valid mono pixels, got {n}"
        )));
    }

    let std_mono = std_pop(&mono_vals);
    if std_mono == 0.0 {
        return Err(Error::DegenerateDepth(
            "mono depth has zero spread at the sample locations".into(),
        ));
    }
    let std_sfm = std_pop(&depth_vals);
    let r_min = (params.min_slope_factor * std_sfm) / std_mono;

    let count_inliers = |r: f64, s: f64, mask: &mut [bool]| -> usize {
        let mut count = 0;
        for (k, (&x, &d)) in mono_vals.iter().zip(depth_vals.iter()).enumerate() {
            let inlier = (r * x + s - d).abs() <= params.inlier_tau * d;
            mask[k] = inlier;
            count += inlier as usize;
        }
        count
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    let mut scratch = vec![false; n];
    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n);
        while j == i {
            j = rng.random_range(0..n);
        }
        let (xi, xj) = (mono_vals[i], mono_vals[j]);
        if xi == xj {
            continue;
        }
        let r = (depth_vals[j] - depth_vals[i]) / (xj - xi);
        let s = depth_vals[i] - r * xi;
        if !r.is_finite() || !s.is_finite() {
            continue;
        }
        let count = count_inliers(r, s, &mut scratch);
        // Strictly-greater keep: ties go to the earlier hypothesis.
        if best.as_ref().map_or(true, |(c, _)| count > *c) {
            best = Some((count, scratch.clone()));
        }
    }
    let (inlier_count, usable_mask) = best.ok_or_else(|| {
        Error::DegenerateDepth("no RANSAC hypothesis with distinct mono depths".into())
    })?;

    // Least-squares refit on the winning inlier set.
    let in_mono: Vec<f64> = mono_vals
        .iter()
        .zip(&usable_mask)
        .filter_map(|(&x, &m)| m.then_some(x))
        .collect();
    let in_depth: Vec<f64> = depth_vals
        .iter()
        .zip(&usable_mask)
        .filter_map(|(&d, &m)| m.then_some(d))
        .collect();
    let (mut scale, mut shift) = match fit_line(&in_mono, &in_depth) {
        Some(rs) => rs,
        // Inlier set collapsed onto one mono value; fall back to the bound.
        None => (r_min, mean(&in_depth) - r_min * mean(&in_mono)),
    };

    let mut clamped = false;
    if scale < r_min {
        scale = r_min;
        shift = mean(&in_depth) - r_min * mean(&in_mono);
        clamped = true;
    }

    let mut inlier_mask = vec![false; samples.len()];
    for (k, &i) in usable_idx.iter().enumerate() {
        inlier_mask[i] = usable_mask[k];
    }

    Ok(AlignmentResult {
        scale,
        shift,
        inlier_count,
        clamped,
        inlier_mask,
        low_inlier: inlier_count * 2 < n,
    })
}

/// Apply `metric = mono · scale + shift` elementwise. Output entries that
/// come out non-positive or non-finite are masked invalid.
pub fn apply_alignment(mono: &DepthMap, result: &AlignmentResult) -> DepthMap {
    let values = mono.values().map(|&v| v * result.scale + result.shift);
    let mask = ndarray::Zip::from(mono.mask())
        .and(&values)
        .map_collect(|&m, &v| m && v.is_finite() && v > 0.0);
    DepthMap { values, mask }
}
