//! The full prior-construction pipeline: align → resize → normalize →
//! warp → fuse → stack → evaluate → write, with structured JSON-lines
//! stage logging.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conditioning::{
    assemble_stacks, median_reference_depth, resize_for_bucket, select_bucket, warp_all_targets,
    BuiltStacks, ResolutionBucket, RESOLUTION_BUCKETS,
};
use crate::depth::{align_depth, apply_alignment, DepthMap, RansacParams};
use crate::io::{rgb_to_image, write_png, ArrayBundle};
use crate::manifest::PartialConfig;
use crate::metrics::{psnr, ssim};
use crate::scene::{normalize_scene, Scene, DEFAULT_MAX_EXTENT};
use crate::warp::{compute_ccm, WarpResult};
use crate::{Error, Result};

/// Resolved pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub ransac: RansacParams,
    pub fourier_levels: usize,
    pub gamma: f64,
    pub gamma_threshold: usize,
    pub max_extent: f64,
    pub bucket_override: Option<ResolutionBucket>,
    /// Treat attached depth as already metric and skip RANSAC alignment.
    pub skip_align: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ransac: RansacParams::default(),
            fourier_levels: 4,
            gamma: crate::attention::DEFAULT_KEY_RESCALE_GAMMA,
            gamma_threshold: crate::attention::KEY_RESCALE_TARGET_THRESHOLD,
            max_extent: DEFAULT_MAX_EXTENT,
            bucket_override: None,
            skip_align: false,
        }
    }
}

fn parse_bucket(text: &str) -> Result<ResolutionBucket> {
    let parts: Vec<&str> = text.split('x').collect();
    let err = || Error::Validation(format!("bucket must look like 512x512, got '{text}'"));
    if parts.len() != 2 {
        return Err(err());
    }
    let height: usize = parts[0].trim().parse().map_err(|_| err())?;
    let width: usize = parts[1].trim().parse().map_err(|_| err())?;
    RESOLUTION_BUCKETS
        .iter()
        .find(|b| b.height == height && b.width == width)
        .copied()
        .ok_or_else(|| {
            Error::Validation(format!("{height}x{width} is not in the resolution table"))
        })
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.ransac.validate()?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Validation(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.max_extent > 0.0 && self.max_extent.is_finite()) {
            return Err(Error::Validation(format!(
                "max extent must be positive, got {}",
                self.max_extent
            )));
        }
        if self.fourier_levels > 16 {
            return Err(Error::Validation(format!(
                "fourier levels {} is out of range (max 16)",
                self.fourier_levels
            )));
        }
        Ok(())
    }

    /// Overlay one configuration layer; later layers win.
    pub fn apply(&mut self, partial: &PartialConfig) -> Result<()> {
        if let Some(v) = partial.ransac_iterations {
            self.ransac.iterations = v;
        }
        if let Some(v) = partial.ransac_tau {
            self.ransac.inlier_tau = v;
        }
        if let Some(v) = partial.seed {
            self.ransac.seed = v;
        }
        if let Some(v) = partial.fourier_levels {
            self.fourier_levels = v;
        }
        if let Some(v) = partial.gamma {
            self.gamma = v;
        }
        if let Some(v) = partial.gamma_threshold {
            self.gamma_threshold = v;
        }
        if let Some(v) = partial.max_extent {
            self.max_extent = v;
        }
        if let Some(text) = &partial.bucket {
            self.bucket_override = Some(parse_bucket(text)?);
        }
        if let Some(v) = partial.skip_align {
            self.skip_align = v;
        }
        Ok(())
    }

    /// Resolve from layered partial configs (defaults first, CLI last).
    pub fn resolve(layers: &[&PartialConfig]) -> Result<Self> {
        let mut config = PipelineConfig::default();
        for layer in layers {
            config.apply(layer)?;
        }
        config.validate()?;
        Ok(config)
    }
}

/// JSON-lines stage log; each record carries the stage name, elapsed
/// milliseconds, and stage-specific fields.
pub struct StageLog {
    sink: Option<Box<dyn Write + Send>>,
}

impl StageLog {
    pub fn new(sink: Box<dyn Write + Send>) -> Self {
        StageLog { sink: Some(sink) }
    }

    pub fn disabled() -> Self {
        StageLog { sink: None }
    }

    pub fn record(&mut self, stage: &str, detail: serde_json::Value, elapsed_ms: f64) {
        let Some(sink) = self.sink.as_mut() else {
            return;
        };
        let mut entry = json!({"stage": stage, "ms": elapsed_ms});
        if let (Some(obj), Some(extra)) = (entry.as_object_mut(), detail.as_object()) {
            for (k, v) in extra {
                obj.insert(k.clone(), v.clone());
            }
        }
        // Logging is best-effort; a broken sink must not fail the pipeline.
        let _ = writeln!(sink, "{entry}");
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Per-view alignment coefficients for the report sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub view_index: usize,
    pub scale: f64,
    pub shift: f64,
    pub inlier_count: usize,
    pub clamped: bool,
    pub low_inlier: bool,
}

/// Scene after alignment, bucket resizing, and normalization.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: Scene,
    /// Aligned metric depth per reference view (also attached to the scene).
    pub aligned: BTreeMap<usize, DepthMap>,
    pub alignments: Vec<AlignmentSummary>,
    pub bucket: ResolutionBucket,
    /// Scale factor applied by scene normalization (1 when untouched).
    pub scene_scale: f64,
}

/// Align reference depths, resize every view to the resolution bucket, and
/// normalize the global scene scale.
pub fn prepare_scene(
    scene: &Scene,
    config: &PipelineConfig,
    log: &mut StageLog,
) -> Result<PreparedScene> {
    config.validate()?;
    let mut scene = scene.clone();

    // Alignment happens at the input resolution, where the sparse sample
    // pixel coordinates are valid.
    let mut alignments = Vec::new();
    for &r in &scene.reference_indices.clone() {
        let start = Instant::now();
        let view = &scene.views[r];
        let depth = view.depth.as_ref().ok_or_else(|| {
            Error::stage(
                "align",
                format!("view {r}"),
                Error::Validation("reference view has no depth map".into()),
            )
        })?;
        if config.skip_align {
            continue;
        }
        let samples = view.samples.as_ref().ok_or_else(|| {
            Error::stage(
                "align",
                format!("view {r}"),
                Error::InsufficientData("reference view has no sparse samples".into()),
            )
        })?;
        let result = align_depth(depth, samples, &config.ransac)
            .map_err(|e| Error::stage("align", format!("view {r}"), e))?;
        let aligned = apply_alignment(depth, &result);
        alignments.push(AlignmentSummary {
            view_index: r,
            scale: result.scale,
            shift: result.shift,
            inlier_count: result.inlier_count,
            clamped: result.clamped,
            low_inlier: result.low_inlier,
        });
        log.record(
            "align",
            json!({"view": r, "scale": result.scale, "shift": result.shift,
                   "inliers": result.inlier_count, "clamped": result.clamped}),
            ms(start),
        );
        scene.views[r].depth = Some(aligned);
    }

    // Bucket comes from the first reference view unless overridden.
    let first_ref = scene.views[scene.reference_indices[0]].intrinsics;
    let bucket = match config.bucket_override {
        Some(b) => b,
        None => select_bucket(first_ref.height, first_ref.width)
            .map_err(|e| Error::stage("resize", "bucket selection", e))?,
    };

    let start = Instant::now();
    for (i, view) in scene.views.iter_mut().enumerate() {
        let keep_depth = scene.reference_indices.contains(&i);
        let (image, depth, k) = resize_for_bucket(
            view.image.as_ref(),
            if keep_depth { view.depth.as_ref() } else { None },
            &view.intrinsics,
            bucket,
        )
        .map_err(|e| Error::stage("resize", format!("view {i}"), e))?;
        view.image = image;
        view.depth = depth;
        view.intrinsics = k;
        // Sample coordinates refer to the original resolution; alignment is
        // done with them, so they are dropped here.
        view.samples = None;
    }
    log.record(
        "resize",
        json!({"bucket": format!("{}x{}", bucket.height, bucket.width)}),
        ms(start),
    );

    let start = Instant::now();
    let (scene, scene_scale) = normalize_scene(scene, config.max_extent)
        .map_err(|e| Error::stage("normalize", "scene", e))?;
    log.record("normalize", json!({"scale": scene_scale}), ms(start));

    let mut aligned = BTreeMap::new();
    for &r in &scene.reference_indices {
        let depth = scene.views[r]
            .depth
            .clone()
            .expect("aligned depth attached above");
        aligned.insert(r, depth);
    }

    Ok(PreparedScene {
        scene,
        aligned,
        alignments,
        bucket,
        scene_scale,
    })
}

/// Compute CCMs, warp into every target, fuse, and assemble the stacks.
pub fn construct_stacks(
    prepared: &PreparedScene,
    config: &PipelineConfig,
    log: &mut StageLog,
) -> Result<BuiltStacks> {
    let scene = &prepared.scene;
    let start = Instant::now();
    let median_depth = median_reference_depth(&prepared.aligned)
        .map_err(|e| Error::stage("ccm", "median depth", e))?;
    let mut ccms = BTreeMap::new();
    for &r in &scene.reference_indices {
        let view = scene.view(r);
        let ccm = compute_ccm(&prepared.aligned[&r], &view.intrinsics, &view.pose, median_depth)
            .map_err(|e| Error::stage("ccm", format!("view {r}"), e))?;
        ccms.insert(r, ccm);
    }
    log.record("ccm", json!({"median_depth": median_depth}), ms(start));

    let start = Instant::now();
    let fused = warp_all_targets(scene, &prepared.aligned, &ccms)
        .map_err(|e| Error::stage("warp", "targets", e))?;
    log.record(
        "warp",
        json!({"targets": scene.target_indices.len(), "references": scene.reference_indices.len()}),
        ms(start),
    );

    let start = Instant::now();
    let stacks = assemble_stacks(scene, &ccms, &fused, config.fourier_levels)
        .map_err(|e| Error::stage("stack", "assembly", e))?;
    log.record("stack", json!({"stacks": stacks.len()}), ms(start));

    Ok(BuiltStacks {
        stacks,
        fused,
        median_depth,
    })
}

/// Per-target-view quality metrics. `psnr_db`/`ssim` are null when the view
/// has no ground-truth image or no coverage; an exact match is reported
/// with `psnr_infinite = true` and a null `psnr_db`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view_index: usize,
    pub coverage: f64,
    pub psnr_db: Option<f64>,
    pub psnr_infinite: bool,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub per_view: Vec<ViewMetrics>,
}

/// Compare fused warps against the targets' ground-truth images under the
/// coverage mask. Targets without ground truth still report coverage.
pub fn evaluate_targets(
    scene: &Scene,
    fused: &BTreeMap<usize, WarpResult>,
    log: &mut StageLog,
) -> Result<MetricReport> {
    let mut per_view = Vec::new();
    for &t in &scene.target_indices {
        let start = Instant::now();
        let warp = &fused[&t];
        let coverage = warp.coverage();
        let mut metrics = ViewMetrics {
            view_index: t,
            coverage,
            psnr_db: None,
            psnr_infinite: false,
            ssim: None,
        };
        if let Some(gt) = &scene.view(t).image {
            if coverage > 0.0 {
                let value = psnr(&warp.rgb, gt, &warp.mask)
                    .map_err(|e| Error::stage("eval", format!("view {t}"), e))?;
                if value.is_infinite() {
                    metrics.psnr_infinite = true;
                } else {
                    metrics.psnr_db = Some(value);
                }
                metrics.ssim = Some(
                    ssim(&warp.rgb, gt, &warp.mask)
                        .map_err(|e| Error::stage("eval", format!("view {t}"), e))?,
                );
            }
        }
        log.record(
            "eval",
            json!({"view": t, "coverage": coverage, "psnr_infinite": metrics.psnr_infinite}),
            ms(start),
        );
        per_view.push(metrics);
    }
    Ok(MetricReport { per_view })
}

/// The JSON report written next to the bundle: bucket, embedding levels,
/// normalization scale, per-view alignment coefficients, and metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scene_id: String,
    pub bucket: [usize; 2],
    pub fourier_levels: usize,
    pub scene_scale: f64,
    pub median_depth: f64,
    pub alignments: Vec<AlignmentSummary>,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub bundle_path: PathBuf,
    pub report_path: PathBuf,
    pub report: PipelineReport,
}

/// Serialize the stacks into the named-array bundle.
pub fn stacks_to_bundle(built: &BuiltStacks) -> ArrayBundle {
    let mut bundle = ArrayBundle::new();
    for stack in &built.stacks {
        let prefix = format!("view{}", stack.view_index);
        bundle.push_array3(format!("{prefix}/rgb"), &stack.rgb);
        bundle.push_array3(format!("{prefix}/plucker"), &stack.plucker);
        bundle.push_mask(format!("{prefix}/mask"), &stack.mask);
        bundle.push_array3(format!("{prefix}/ccm_fourier"), &stack.ccm_fourier);
    }
    bundle
}

/// Write the bundle, target previews, and the JSON report into `out_dir`.
/// On failure every partially written file is removed.
pub fn write_outputs(
    out_dir: &Path,
    built: &BuiltStacks,
    report: &PipelineReport,
) -> Result<PipelineOutput> {
    std::fs::create_dir_all(out_dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<PipelineOutput> {
        let bundle_path = out_dir.join("bundle.mvpb");
        stacks_to_bundle(built).write_to(&bundle_path)?;
        written.push(bundle_path.clone());

        for (&t, warp) in &built.fused {
            let preview_path = out_dir.join(format!("preview_view{t}.png"));
            write_png(&preview_path, &rgb_to_image(&warp.rgb, Some(&warp.mask)))?;
            written.push(preview_path);
        }

        let report_path = out_dir.join("report.json");
        std::fs::write(&report_path, serde_json::to_string_pretty(report)?)?;
        written.push(report_path.clone());

        Ok(PipelineOutput {
            bundle_path,
            report_path,
            report: report.clone(),
        })
    })();
    if result.is_err() {
        for path in &written {
            let _ = std::fs::remove_file(path);
        }
    }
    result
}

/// Run the whole pipeline for one scene and write the bundle, report, and
/// target previews into `out_dir`.
pub fn run_pipeline(
    scene: &Scene,
    config: &PipelineConfig,
    out_dir: &Path,
    log: &mut StageLog,
) -> Result<PipelineOutput> {
    let prepared = prepare_scene(scene, config, log)?;
    let built = construct_stacks(&prepared, config, log)?;
    let metrics = evaluate_targets(&prepared.scene, &built.fused, log)?;

    let report = PipelineReport {
        scene_id: prepared.scene.id.clone(),
        bucket: [prepared.bucket.height, prepared.bucket.width],
        fourier_levels: config.fourier_levels,
        scene_scale: prepared.scene_scale,
        median_depth: built.median_depth,
        alignments: prepared.alignments.clone(),
        metrics,
    };

    let start = Instant::now();
    let output = write_outputs(out_dir, &built, &report)?;
    log.record("write", json!({"dir": out_dir.display().to_string()}), ms(start));
    Ok(output)
}
