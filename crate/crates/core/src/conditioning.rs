//! Resolution buckets and per-view conditioning stacks.
//!
//! A conditioning stack bundles, per view, the full-resolution inputs (RGB,
//! Plücker rays, reference/target mask) with the Fourier-embedded canonical
//! coordinates at 1/8 scale. Reference views carry their own image and an
//! all-ones mask; target views carry the fused multi-view warp and its
//! coverage mask.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::camera::{plucker_map, Intrinsics};
use crate::depth::DepthMap;
use crate::scene::Scene;
use crate::warp::{compute_ccm, fourier_embed, fuse_priors, warp_view, CanonicalCoordinateMap, WarpResult};
use crate::{Error, Result};

/// One entry of the fixed multi-scale resolution table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolutionBucket {
    pub height: usize,
    pub width: usize,
}

impl ResolutionBucket {
    fn log_aspect(&self) -> f64 {
        (self.height as f64 / self.width as f64).ln()
    }
}

/// The fixed multi-scale resolution table, in selection-priority order.
pub const RESOLUTION_BUCKETS: [ResolutionBucket; 23] = {
    const fn b(height: usize, width: usize) -> ResolutionBucket {
        ResolutionBucket { height, width }
    }
    [
        b(320, 768),
        b(384, 448),
        b(576, 448),
        b(320, 704),
        b(448, 576),
        b(576, 384),
        b(320, 640),
        b(448, 512),
        b(576, 320),
        b(320, 576),
        b(512, 512),
        b(640, 384),
        b(320, 512),
        b(448, 384),
        b(640, 320),
        b(384, 640),
        b(512, 448),
        b(704, 320),
        b(384, 576),
        b(512, 384),
        b(768, 320),
        b(384, 512),
        b(512, 320),
    ]
};

/// Startup check: every table entry divisible by 64 in both dimensions
/// (which guarantees the 1/8-scale maps have integer sizes).
pub fn validate_bucket_table() -> Result<()> {
    for b in RESOLUTION_BUCKETS {
        if b.height % 64 != 0 || b.width % 64 != 0 {
            return Err(Error::Validation(format!(
                "bucket {}x{} not divisible by 64",
                b.height, b.width
            )));
        }
    }
    Ok(())
}

/// Pick the bucket whose aspect ratio is closest to the input's in log
/// space; ties go to the earlier table entry.
pub fn select_bucket(in_height: usize, in_width: usize) -> Result<ResolutionBucket> {
    if in_height == 0 || in_width == 0 {
        return Err(Error::Validation("bucket selection needs positive dimensions".into()));
    }
    let target = (in_height as f64 / in_width as f64).ln();
    let mut best = RESOLUTION_BUCKETS[0];
    let mut best_diff = (best.log_aspect() - target).abs();
    for b in RESOLUTION_BUCKETS.iter().skip(1) {
        let diff = (b.log_aspect() - target).abs();
        if diff < best_diff {
            best = *b;
            best_diff = diff;
        }
    }
    Ok(best)
}

fn bilinear_sample(src: &Array3<f64>, channel: usize, y: f64, x: f64) -> f64 {
    let (_, h, w) = src.dim();
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let top = src[[channel, y0, x0]] * (1.0 - fx) + src[[channel, y0, x1]] * fx;
    let bottom = src[[channel, y1, x0]] * (1.0 - fx) + src[[channel, y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Scale-then-center-crop a view to a bucket. RGB is resampled bilinearly;
/// depth uses nearest-neighbor so values never mix across discontinuities,
/// and the values themselves are unchanged (z is invariant to resampling).
/// The intrinsics are rescaled by the exact per-axis factors and the
/// principal point shifted by the crop offset.
pub fn resize_for_bucket(
    image: Option<&Array3<f64>>,
    depth: Option<&DepthMap>,
    k: &Intrinsics,
    bucket: ResolutionBucket,
) -> Result<(Option<Array3<f64>>, Option<DepthMap>, Intrinsics)> {
    let (h, w) = (k.height, k.width);
    if let Some(img) = image {
        if img.dim() != (3, h, w) {
            return Err(Error::Validation(format!(
                "image shape {:?} does not match camera {}x{}",
                img.dim(),
                h,
                w
            )));
        }
    }
    if let Some(d) = depth {
        if d.height() != h || d.width() != w {
            return Err(Error::Validation("depth does not match camera dimensions".into()));
        }
    }

    // Cover scale, then exact per-axis factors for the rounded size.
    let s = (bucket.height as f64 / h as f64).max(bucket.width as f64 / w as f64);
    let rh = ((h as f64 * s).round() as usize).max(bucket.height);
    let rw = ((w as f64 * s).round() as usize).max(bucket.width);
    let sy = rh as f64 / h as f64;
    let sx = rw as f64 / w as f64;
    let dy = (rh - bucket.height) / 2;
    let dx = (rw - bucket.width) / 2;

    let out_image = image.map(|img| {
        Array3::from_shape_fn((3, bucket.height, bucket.width), |(c, r, col)| {
            let y = ((r + dy) as f64 + 0.5) / sy - 0.5;
            let x = ((col + dx) as f64 + 0.5) / sx - 0.5;
            bilinear_sample(img, c, y, x)
        })
    });

    let out_depth = match depth {
        Some(d) => {
            let nearest = |dst: usize, offset: usize, scale: f64, max: usize| {
                let p = ((dst + offset) as f64 + 0.5) / scale - 0.5;
                (p + 0.5).floor().clamp(0.0, (max - 1) as f64) as usize
            };
            let values = Array2::from_shape_fn((bucket.height, bucket.width), |(r, c)| {
                d.values()[[nearest(r, dy, sy, h), nearest(c, dx, sx, w)]]
            });
            let mask = Array2::from_shape_fn((bucket.height, bucket.width), |(r, c)| {
                d.mask()[[nearest(r, dy, sy, h), nearest(c, dx, sx, w)]]
            });
            Some(DepthMap::from_parts(values, mask)?)
        }
        None => None,
    };

    let out_k = Intrinsics::new(
        k.fx * sx,
        k.fy * sy,
        k.cx * sx - dx as f64,
        k.cy * sy - dy as f64,
        bucket.width,
        bucket.height,
    )?;
    Ok((out_image, out_depth, out_k))
}

/// Reference or target role of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackRole {
    Reference,
    Target,
}

/// Per-view conditioning stack: full-resolution RGB (own for references,
/// fused warp for targets), Plücker rays, and role/coverage mask, plus the
/// Fourier-embedded canonical coordinates at 1/8 resolution.
#[derive(Debug, Clone)]
pub struct PriorStack {
    pub view_index: usize,
    pub role: StackRole,
    pub rgb: Array3<f64>,
    pub plucker: Array3<f64>,
    pub mask: Array2<bool>,
    pub ccm_fourier: Array3<f64>,
}

impl PriorStack {
    /// Channel-count and divisibility invariants.
    pub fn validate(&self, levels: usize) -> Result<()> {
        let (rc, h, w) = self.rgb.dim();
        if rc != 3 {
            return Err(Error::Validation(format!("stack rgb has {rc} channels")));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Validation(format!(
                "stack resolution {h}x{w} is not divisible by 8"
            )));
        }
        if self.plucker.dim() != (6, h, w) {
            return Err(Error::Validation("stack plucker shape mismatch".into()));
        }
        if self.mask.dim() != (h, w) {
            return Err(Error::Validation("stack mask shape mismatch".into()));
        }
        let expected = 3 + 6 * levels;
        if self.ccm_fourier.dim() != (expected, h / 8, w / 8) {
            return Err(Error::Validation(format!(
                "stack ccm shape {:?}, expected ({expected}, {}, {})",
                self.ccm_fourier.dim(),
                h / 8,
                w / 8
            )));
        }
        Ok(())
    }
}

/// Stacks plus the intermediates the evaluator needs.
#[derive(Debug, Clone)]
pub struct BuiltStacks {
    /// One stack per reference/target view, ordered by scene view index.
    pub stacks: Vec<PriorStack>,
    /// Fused warp per target view index.
    pub fused: BTreeMap<usize, WarpResult>,
    /// Median of all valid aligned reference depths, used for the CCMs.
    pub median_depth: f64,
}

/// Median over all valid values of the given aligned reference maps.
pub fn median_reference_depth(aligned: &BTreeMap<usize, DepthMap>) -> Result<f64> {
    let mut values: Vec<f64> = Vec::new();
    for depth in aligned.values() {
        for (&v, &m) in depth.values().iter().zip(depth.mask().iter()) {
            if m {
                values.push(v);
            }
        }
    }
    if values.is_empty() {
        return Err(Error::DegenerateDepth(
            "no valid aligned depth to take the median of".into(),
        ));
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
    let n = values.len();
    Ok(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Sample a canonical coordinate map at the pixel centers of the 8×-coarser
/// grid. Pointwise sampling (not averaging) so coordinates never blend
/// across depth discontinuities.
fn sample_eighth(ccm: &CanonicalCoordinateMap) -> CanonicalCoordinateMap {
    let (h, w) = (ccm.height() / 8, ccm.width() / 8);
    let fine = |i: usize| 8 * i + 4;
    let coords = Array3::from_shape_fn((3, h, w), |(c, r, col)| {
        ccm.coords[[c, fine(r), fine(col)]]
    });
    let mask = Array2::from_shape_fn((h, w), |(r, col)| ccm.mask[[fine(r), fine(col)]]);
    CanonicalCoordinateMap { coords, mask }
}

/// Warp every reference view into every target and fuse, returning the
/// fused result per target view index. References are fused in the order
/// they appear in `scene.reference_indices`.
pub fn warp_all_targets(
    scene: &Scene,
    aligned: &BTreeMap<usize, DepthMap>,
    ccms: &BTreeMap<usize, CanonicalCoordinateMap>,
) -> Result<BTreeMap<usize, WarpResult>> {
    let fused: Vec<(usize, WarpResult)> = scene
        .target_indices
        .par_iter()
        .map(|&t| -> Result<(usize, WarpResult)> {
            let dst = scene.view(t);
            let mut warps = Vec::with_capacity(scene.reference_indices.len());
            for &r in &scene.reference_indices {
                let src = scene.view(r);
                let rgb = src.image.as_ref().ok_or_else(|| {
                    Error::Validation(format!("reference view {r} has no image"))
                })?;
                let warp = warp_view(
                    rgb,
                    &ccms[&r],
                    &aligned[&r],
                    (&src.intrinsics, &src.pose),
                    (&dst.intrinsics, &dst.pose),
                )?;
                warps.push(warp);
            }
            Ok((t, fuse_priors(&warps)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fused.into_iter().collect())
}

/// Assemble conditioning stacks for every reference and target view given
/// the fused warps. Output is ordered by scene view index.
pub fn assemble_stacks(
    scene: &Scene,
    ccms: &BTreeMap<usize, CanonicalCoordinateMap>,
    fused: &BTreeMap<usize, WarpResult>,
    levels: usize,
) -> Result<Vec<PriorStack>> {
    let mut order: Vec<(usize, StackRole)> = scene
        .reference_indices
        .iter()
        .map(|&i| (i, StackRole::Reference))
        .chain(scene.target_indices.iter().map(|&i| (i, StackRole::Target)))
        .collect();
    order.sort_by_key(|&(i, _)| i);

    let mut stacks = Vec::with_capacity(order.len());
    for (index, role) in order {
        let view = scene.view(index);
        let k = &view.intrinsics;
        if k.height % 8 != 0 || k.width % 8 != 0 {
            return Err(Error::Validation(format!(
                "view {index} resolution {}x{} is not divisible by 8",
                k.height, k.width
            )));
        }
        let plucker = plucker_map(k, &view.pose).channels;
        let stack = match role {
            StackRole::Reference => {
                let rgb = view
                    .image
                    .as_ref()
                    .ok_or_else(|| Error::Validation(format!("reference view {index} has no image")))?
                    .clone();
                let ccm = sample_eighth(&ccms[&index]);
                PriorStack {
                    view_index: index,
                    role,
                    rgb,
                    plucker,
                    mask: Array2::from_elem((k.height, k.width), true),
                    ccm_fourier: fourier_embed(&ccm, levels),
                }
            }
            StackRole::Target => {
                let warp = &fused[&index];
                let ccm = sample_eighth(&CanonicalCoordinateMap {
                    coords: warp.ccm.clone(),
                    mask: warp.mask.clone(),
                });
                PriorStack {
                    view_index: index,
                    role,
                    rgb: warp.rgb.clone(),
                    plucker,
                    mask: warp.mask.clone(),
                    ccm_fourier: fourier_embed(&ccm, levels),
                }
            }
        };
        stack.validate(levels)?;
        stacks.push(stack);
    }
    Ok(stacks)
}

/// Build the conditioning stacks for a normalized scene whose reference
/// views have aligned metric depth: compute CCMs against the scene median
/// depth, warp and fuse into every target, then assemble per-view stacks.
pub fn build_stacks(
    scene: &Scene,
    aligned: &BTreeMap<usize, DepthMap>,
    levels: usize,
) -> Result<BuiltStacks> {
    for &r in &scene.reference_indices {
        if !aligned.contains_key(&r) {
            return Err(Error::Validation(format!(
                "reference view {r} has no aligned depth"
            )));
        }
    }
    let median_depth = median_reference_depth(aligned)?;
    let mut ccms = BTreeMap::new();
    for &r in &scene.reference_indices {
        let view = scene.view(r);
        let ccm = compute_ccm(&aligned[&r], &view.intrinsics, &view.pose, median_depth)?;
        ccms.insert(r, ccm);
    }
    let fused = warp_all_targets(scene, aligned, &ccms)?;
    let stacks = assemble_stacks(scene, &ccms, &fused, levels)?;
    Ok(BuiltStacks {
        stacks,
        fused,
        median_depth,
    })
}
