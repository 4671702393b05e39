//! Canonical coordinate maps, forward warping with deterministic z-buffer
//! fusion, and Fourier embedding of coordinates.
//!
//! Forward warping unprojects every valid source pixel with its metric
//! depth, transforms it into the target camera, and writes its RGB and
//! canonical coordinates to the nearest target pixel. Collisions keep the
//! candidate with the smallest target-camera depth; depths within
//! [`ZBUFFER_TIE_EPS`] of each other are ties, resolved by lower
//! (source view, source row, source col), which keeps results independent
//! of evaluation order.

use nalgebra::Vector3;
use ndarray::{Array2, Array3};

use crate::camera::{project, relative_pose, unproject, Intrinsics, Pose};
use crate::depth::DepthMap;
use crate::{Error, Result};

/// Depth differences at or below this are z-buffer ties.
pub const ZBUFFER_TIE_EPS: f64 = 1e-6;

/// Radial contraction bounding unbounded scenes: identity inside the unit
/// ball, `(2 − 1/‖x‖)·x/‖x‖` outside. The image lies in the open radius-2
/// ball and the map is continuous at the unit sphere.
pub fn contract_point(x: Vector3<f64>) -> Vector3<f64> {
    let norm = x.norm();
    if norm <= 1.0 {
        x
    } else {
        (2.0 - 1.0 / norm) * (x / norm)
    }
}

/// A world point to canonical coordinates in `[0,1]^3`: divide by the scene
/// median depth, contract, then map the radius-2 ball affinely via
/// `(x + 2) / 4`.
pub fn canonical_coordinates(p_world: Vector3<f64>, median_depth: f64) -> Vector3<f64> {
    let contracted = contract_point(p_world / median_depth);
    (contracted + Vector3::new(2.0, 2.0, 2.0)) / 4.0
}

/// Per-pixel canonical-space coordinates in `[0,1]^3` with a validity mask,
/// channel-first `(3, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalCoordinateMap {
    pub coords: Array3<f64>,
    pub mask: Array2<bool>,
}

impl CanonicalCoordinateMap {
    pub fn height(&self) -> usize {
        self.coords.dim().1
    }

    pub fn width(&self) -> usize {
        self.coords.dim().2
    }
}

/// Unproject every valid depth pixel into the world frame and map it to
/// canonical coordinates. Pixels with invalid depth stay invalid.
pub fn compute_ccm(
    depth: &DepthMap,
    k: &Intrinsics,
    pose: &Pose,
    median_depth: f64,
) -> Result<CanonicalCoordinateMap> {
    if !(median_depth > 0.0 && median_depth.is_finite()) {
        return Err(Error::Validation(format!(
            "median depth must be positive, got {median_depth}"
        )));
    }
    if depth.height() != k.height || depth.width() != k.width {
        return Err(Error::Validation(format!(
            "depth {}x{} does not match camera {}x{}",
            depth.height(),
            depth.width(),
            k.height,
            k.width
        )));
    }
    let mut coords = Array3::zeros((3, k.height, k.width));
    let mut mask = Array2::from_elem((k.height, k.width), false);
    for row in 0..k.height {
        for col in 0..k.width {
            let Some(d) = depth.get(row, col) else {
                continue;
            };
            let p_cam = unproject([col as f64 + 0.5, row as f64 + 0.5], d, k)?;
            let p_world = pose.inverse_transform(&p_cam);
            let c = canonical_coordinates(p_world, median_depth);
            for i in 0..3 {
                coords[[i, row, col]] = c[i];
            }
            mask[[row, col]] = true;
        }
    }
    Ok(CanonicalCoordinateMap { coords, mask })
}

/// Forward-warp output at the target resolution. Covered pixels hold the
/// surviving candidate's RGB, canonical coordinates, target-camera depth,
/// and source-view index (list position once fused).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    /// `(3, height, width)`; defined only under the mask.
    pub rgb: Array3<f64>,
    /// `(3, height, width)`; defined only under the mask.
    pub ccm: Array3<f64>,
    /// Target-camera depth of the surviving candidate; `+inf` when empty.
    pub zbuffer: Array2<f64>,
    pub mask: Array2<bool>,
    /// Source-view index of the surviving candidate; 0 for a single warp,
    /// rewritten to the input list position by [`fuse_priors`].
    pub src_index: Array2<u32>,
}

impl WarpResult {
    fn empty(height: usize, width: usize) -> Self {
        WarpResult {
            rgb: Array3::zeros((3, height, width)),
            ccm: Array3::zeros((3, height, width)),
            zbuffer: Array2::from_elem((height, width), f64::INFINITY),
            mask: Array2::from_elem((height, width), false),
            src_index: Array2::zeros((height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.zbuffer.nrows()
    }

    pub fn width(&self) -> usize {
        self.zbuffer.ncols()
    }

    /// Fraction of target pixels covered by the mask.
    pub fn coverage(&self) -> f64 {
        let total = self.mask.len();
        if total == 0 {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / total as f64
    }
}

/// Forward-warp a source view's RGB and CCM into a target camera.
///
/// Source pixels are visited in row-major order; each valid one is
/// unprojected at its pixel center with the aligned metric depth, moved by
/// the relative pose, and projected into the target. Candidates behind the
/// camera or outside the target image are dropped. The continuous target
/// position `(u, v)` lands on pixel `(floor(v), floor(u))`, which is the
/// nearest pixel center under the half-integer center convention.
pub fn warp_view(
    src_rgb: &Array3<f64>,
    src_ccm: &CanonicalCoordinateMap,
    src_depth: &DepthMap,
    src_cam: (&Intrinsics, &Pose),
    dst_cam: (&Intrinsics, &Pose),
) -> Result<WarpResult> {
    let (src_k, src_pose) = src_cam;
    let (dst_k, dst_pose) = dst_cam;
    let (h, w) = (src_k.height, src_k.width);
    if src_rgb.dim() != (3, h, w) {
        return Err(Error::Validation(format!(
            "source rgb shape {:?} does not match camera {}x{}",
            src_rgb.dim(),
            h,
            w
        )));
    }
    if src_ccm.height() != h || src_ccm.width() != w {
        return Err(Error::Validation("source ccm resolution mismatch".into()));
    }
    if src_depth.height() != h || src_depth.width() != w {
        return Err(Error::Validation("source depth resolution mismatch".into()));
    }

    let rel = relative_pose(src_pose, dst_pose);
    let mut out = WarpResult::empty(dst_k.height, dst_k.width);
    for row in 0..h {
        for col in 0..w {
            let Some(d) = src_depth.get(row, col) else {
                continue;
            };
            if !src_ccm.mask[[row, col]] {
                continue;
            }
            let p_src = unproject([col as f64 + 0.5, row as f64 + 0.5], d, src_k)?;
            let p_dst = rel.transform(&p_src);
            let Some(proj) = project(&p_dst, dst_k) else {
                continue;
            };
            let tc = proj.pixel[0].floor();
            let tr = proj.pixel[1].floor();
            if tc < 0.0 || tr < 0.0 || tc >= dst_k.width as f64 || tr >= dst_k.height as f64 {
                continue;
            }
            let (tr, tc) = (tr as usize, tc as usize);
            // Earlier candidates have lower (row, col): replace only when
            // strictly closer by more than the tie epsilon.
            if out.mask[[tr, tc]] && proj.depth >= out.zbuffer[[tr, tc]] - ZBUFFER_TIE_EPS {
                continue;
            }
            for i in 0..3 {
                out.rgb[[i, tr, tc]] = src_rgb[[i, row, col]];
                out.ccm[[i, tr, tc]] = src_ccm.coords[[i, row, col]];
            }
            out.zbuffer[[tr, tc]] = proj.depth;
            out.mask[[tr, tc]] = true;
        }
    }
    Ok(out)
}

/// Fuse warps from multiple reference views: per pixel, the candidate with
/// the smallest target-camera depth wins; ties within [`ZBUFFER_TIE_EPS`]
/// go to the lower list index. Coverage is the union of the input masks.
pub fn fuse_priors(results: &[WarpResult]) -> Result<WarpResult> {
    let first = results
        .first()
        .ok_or_else(|| Error::Validation("fuse_priors needs at least one input".into()))?;
    let (h, w) = (first.height(), first.width());
    for (i, r) in results.iter().enumerate() {
        if r.height() != h || r.width() != w {
            return Err(Error::Validation(format!(
                "fuse input {i} is {}x{}, expected {h}x{w}",
                r.height(),
                r.width()
            )));
        }
    }
    let mut out = first.clone();
    for (idx, r) in results.iter().enumerate().skip(1) {
        for row in 0..h {
            for col in 0..w {
                if !r.mask[[row, col]] {
                    continue;
                }
                if out.mask[[row, col]]
                    && r.zbuffer[[row, col]] >= out.zbuffer[[row, col]] - ZBUFFER_TIE_EPS
                {
                    continue;
                }
                for i in 0..3 {
                    out.rgb[[i, row, col]] = r.rgb[[i, row, col]];
                    out.ccm[[i, row, col]] = r.ccm[[i, row, col]];
                }
                out.zbuffer[[row, col]] = r.zbuffer[[row, col]];
                out.mask[[row, col]] = true;
                out.src_index[[row, col]] = idx as u32;
            }
        }
    }
    Ok(out)
}

/// Fourier-embed canonical coordinates: per coordinate, the raw value
/// followed by `sin(2^k·π·x), cos(2^k·π·x)` for `k = 0..levels`, giving
/// `3 + 6·levels` channels. Invalid pixels emit all-zero channels, which is
/// distinguishable from a valid zero (its cos channels are 1).
pub fn fourier_embed(ccm: &CanonicalCoordinateMap, levels: usize) -> Array3<f64> {
    let (h, w) = (ccm.height(), ccm.width());
    let per_coord = 1 + 2 * levels;
    let mut out = Array3::zeros((3 * per_coord, h, w));
    for row in 0..h {
        for col in 0..w {
            if !ccm.mask[[row, col]] {
                continue;
            }
            for coord in 0..3 {
                let x = ccm.coords[[coord, row, col]];
                let base = coord * per_coord;
                out[[base, row, col]] = x;
                for level in 0..levels {
                    let arg = (1u64 << level) as f64 * std::f64::consts::PI * x;
                    out[[base + 1 + 2 * level, row, col]] = arg.sin();
                    out[[base + 2 + 2 * level, row, col]] = arg.cos();
                }
            }
        }
    }
    out
}
