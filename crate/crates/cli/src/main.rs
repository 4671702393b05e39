//! Command-line front end for the 3D prior construction pipeline.
//!
//! Exit codes: 0 on success, 2 for validation failures (bad arguments,
//! malformed manifests, missing files), 3 for pipeline stage failures.

mod plot;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mvprior::attention::{dilution_experiment, DilutionRow};
use mvprior::conditioning::validate_bucket_table;
use mvprior::depth::align_depth;
use mvprior::io::{rgb_to_image, write_png, ArrayBundle};
use mvprior::manifest::{load_scene, PartialConfig};
use mvprior::pipeline::{
    construct_stacks, evaluate_targets, prepare_scene, run_pipeline, write_outputs,
    PipelineConfig, PipelineReport, StageLog,
};
use mvprior::scene::normalize_scene;
use mvprior::warp::{compute_ccm, warp_view};
use mvprior::{Error, Result};

/// Environment variable naming the default config file.
const CONFIG_ENV: &str = "MVPRIOR_CONFIG";

#[derive(Parser)]
#[command(
    name = "mvprior",
    version,
    about = "3D prior construction for multi-view synthesis: depth alignment, geometric warping, Plücker embeddings, conditioning stacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file with default settings (falls back to $MVPRIOR_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write JSON-lines stage logs to this file instead of stderr.
    #[arg(long, global = true)]
    log_file: Option<PathBuf>,
    /// Disable stage logging.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args, Default)]
struct ConfigFlags {
    /// RANSAC seed (fixed seed gives bit-identical outputs).
    #[arg(long)]
    seed: Option<u64>,
    /// RANSAC hypothesis count.
    #[arg(long)]
    ransac_iters: Option<usize>,
    /// Relative inlier threshold for RANSAC.
    #[arg(long)]
    ransac_tau: Option<f64>,
    /// Fourier embedding octave count L (3+6L channels).
    #[arg(long)]
    fourier_levels: Option<usize>,
    /// Key-rescale factor for the attention kernel.
    #[arg(long)]
    gamma: Option<f64>,
    /// Target count above which key rescaling engages.
    #[arg(long)]
    gamma_threshold: Option<usize>,
    /// Longest allowed camera-to-camera distance after normalization.
    #[arg(long)]
    max_extent: Option<f64>,
    /// Resolution bucket override, e.g. 512x512 (must be a table entry).
    #[arg(long)]
    bucket: Option<String>,
    /// Treat attached depth maps as metric; skip RANSAC alignment.
    #[arg(long)]
    skip_align: bool,
}

impl ConfigFlags {
    fn to_partial(&self) -> PartialConfig {
        PartialConfig {
            ransac_iterations: self.ransac_iters,
            ransac_tau: self.ransac_tau,
            seed: self.seed,
            fourier_levels: self.fourier_levels,
            gamma: self.gamma,
            gamma_threshold: self.gamma_threshold,
            max_extent: self.max_extent,
            bucket: self.bucket.clone(),
            skip_align: self.skip_align.then_some(true),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Align monocular depth to metric scale per reference view; prints JSON.
    Align {
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict to one view index.
        #[arg(long)]
        view: Option<usize>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Print the global scene-scale normalization factor as JSON.
    Normalize {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Warp one reference view into another view's camera; writes a
    /// named-array container plus a PNG preview.
    Warp {
        #[arg(long)]
        manifest: PathBuf,
        /// Source (reference) view index.
        #[arg(long)]
        src: usize,
        /// Destination view index.
        #[arg(long)]
        dst: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Build conditioning stacks and write the bundle (no evaluation).
    Stack {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Run the pipeline in memory and print the metric report as JSON.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// List per-view metrics sorted by view index instead of manifest
        /// target order.
        #[arg(long)]
        sorted_views: bool,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Emit the attention-dilution table as CSV (and optionally a plot).
    AttentionDemo {
        /// Reference token count.
        #[arg(long, default_value_t = 3)]
        n_ref: usize,
        /// Comma-separated target token counts.
        #[arg(long, default_value = "0,8,24,50,100")]
        targets: String,
        /// Token dimension.
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Key-rescale factor compared against γ=1.
        #[arg(long)]
        gamma: Option<f64>,
        /// CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// PNG plot of the two mass curves.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Full chain per scene: align → normalize → warp → fuse → stack →
    /// evaluate; writes bundle, previews, and report.
    Pipeline {
        /// One or more scene manifests.
        #[arg(long, required = true, num_args = 1..)]
        manifest: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
}

fn config_file_layer(cli_config: &Option<PathBuf>) -> Result<Option<PartialConfig>> {
    let path = cli_config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let Some(path) = path else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::Validation(format!("cannot read config {}: {e}", path.display()))
    })?;
    let partial: PartialConfig = serde_json::from_str(&text).map_err(|e| {
        Error::Validation(format!("malformed config {}: {e}", path.display()))
    })?;
    Ok(Some(partial))
}

/// Layered resolution: defaults < config file < manifest config < flags.
fn resolve_config(
    cli_config: &Option<PathBuf>,
    manifest_config: Option<&PartialConfig>,
    flags: &ConfigFlags,
) -> Result<PipelineConfig> {
    let mut layers: Vec<PartialConfig> = Vec::new();
    if let Some(file_layer) = config_file_layer(cli_config)? {
        layers.push(file_layer);
    }
    if let Some(m) = manifest_config {
        layers.push(m.clone());
    }
    layers.push(flags.to_partial());
    let refs: Vec<&PartialConfig> = layers.iter().collect();
    PipelineConfig::resolve(&refs)
}

fn stage_log(log_file: &Option<PathBuf>, quiet: bool) -> Result<StageLog> {
    if quiet {
        return Ok(StageLog::disabled());
    }
    Ok(match log_file {
        Some(path) => StageLog::new(Box::new(std::fs::File::create(path)?)),
        None => StageLog::new(Box::new(std::io::stderr())),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_target_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Validation(format!("bad target count '{t}'")))
        })
        .collect()
}

fn cmd_align(scene: &mvprior::scene::Scene, view: Option<usize>, config: &PipelineConfig) -> Result<()> {
    let indices: Vec<usize> = match view {
        Some(v) => {
            if !scene.reference_indices.contains(&v) {
                return Err(Error::Validation(format!("view {v} is not a reference view")));
            }
            vec![v]
        }
        None => scene.reference_indices.clone(),
    };
    let mut results = Vec::new();
    for r in indices {
        let v = scene.view(r);
        let depth = v.depth.as_ref().ok_or_else(|| {
            Error::stage(
                "align",
                format!("view {r}"),
                Error::Validation("reference view has no depth map".into()),
            )
        })?;
        let samples = v.samples.as_ref().ok_or_else(|| {
            Error::stage(
                "align",
                format!("view {r}"),
                Error::InsufficientData("reference view has no sparse samples".into()),
            )
        })?;
        let result = align_depth(depth, samples, &config.ransac)
            .map_err(|e| Error::stage("align", format!("view {r}"), e))?;
        results.push(serde_json::json!({
            "view_index": r,
            "scale": result.scale,
            "shift": result.shift,
            "inlier_count": result.inlier_count,
            "clamped": result.clamped,
            "low_inlier": result.low_inlier,
        }));
    }
    print_json(&results)
}

fn cmd_normalize(scene: mvprior::scene::Scene, config: &PipelineConfig) -> Result<()> {
    let before = scene.max_camera_distance();
    let (scene, scale) = normalize_scene(scene, config.max_extent)?;
    print_json(&serde_json::json!({
        "max_camera_distance_before": before,
        "max_camera_distance_after": scene.max_camera_distance(),
        "scale": scale,
    }))
}

fn cmd_warp(
    scene: mvprior::scene::Scene,
    src: usize,
    dst: usize,
    out: &Path,
    config: &PipelineConfig,
) -> Result<()> {
    let n = scene.views.len();
    if src >= n || dst >= n {
        return Err(Error::Validation(format!(
            "src/dst must be below the view count {n}"
        )));
    }

    // Align the source depth, then normalize the scene so the canonical
    // coordinates match what the pipeline would produce.
    let mut scene = scene;
    let view = scene.view(src);
    let depth = view.depth.as_ref().ok_or_else(|| {
        Error::stage(
            "align",
            format!("view {src}"),
            Error::Validation("source view has no depth map".into()),
        )
    })?;
    let aligned = if config.skip_align {
        depth.clone()
    } else {
        let samples = view.samples.as_ref().ok_or_else(|| {
            Error::stage(
                "align",
                format!("view {src}"),
                Error::InsufficientData("source view has no sparse samples".into()),
            )
        })?;
        let result = align_depth(depth, samples, &config.ransac)
            .map_err(|e| Error::stage("align", format!("view {src}"), e))?;
        mvprior::depth::apply_alignment(depth, &result)
    };
    scene.views[src].depth = Some(aligned);
    let (scene, _) = normalize_scene(scene, config.max_extent)?;

    let src_view = scene.view(src);
    let dst_view = scene.view(dst);
    let depth = src_view.depth.as_ref().expect("aligned above");
    let mut aligned_map = BTreeMap::new();
    aligned_map.insert(src, depth.clone());
    let median = mvprior::conditioning::median_reference_depth(&aligned_map)
        .map_err(|e| Error::stage("ccm", format!("view {src}"), e))?;
    let ccm = compute_ccm(depth, &src_view.intrinsics, &src_view.pose, median)
        .map_err(|e| Error::stage("ccm", format!("view {src}"), e))?;
    let rgb = src_view.image.as_ref().ok_or_else(|| {
        Error::Validation(format!("source view {src} has no image"))
    })?;
    let warp = warp_view(
        rgb,
        &ccm,
        depth,
        (&src_view.intrinsics, &src_view.pose),
        (&dst_view.intrinsics, &dst_view.pose),
    )
    .map_err(|e| Error::stage("warp", format!("{src}->{dst}"), e))?;

    std::fs::create_dir_all(out)?;
    let mut bundle = ArrayBundle::new();
    bundle.push_array3("rgb", &warp.rgb);
    bundle.push_array3("ccm", &warp.ccm);
    bundle.push_array2("zbuffer", &warp.zbuffer);
    bundle.push_mask("mask", &warp.mask);
    bundle.push_u32_2d("srcidx", &warp.src_index);
    let container = out.join(format!("warp_{src}_to_{dst}.mvpb"));
    bundle.write_to(&container)?;
    let preview = out.join(format!("warp_{src}_to_{dst}.png"));
    write_png(&preview, &rgb_to_image(&warp.rgb, Some(&warp.mask)))?;
    print_json(&serde_json::json!({
        "container": container.display().to_string(),
        "preview": preview.display().to_string(),
        "coverage": warp.coverage(),
    }))
}

fn cmd_stack(
    scene: &mvprior::scene::Scene,
    out: &Path,
    config: &PipelineConfig,
    log: &mut StageLog,
) -> Result<()> {
    let prepared = prepare_scene(scene, config, log)?;
    let built = construct_stacks(&prepared, config, log)?;
    let report = PipelineReport {
        scene_id: prepared.scene.id.clone(),
        bucket: [prepared.bucket.height, prepared.bucket.width],
        fourier_levels: config.fourier_levels,
        scene_scale: prepared.scene_scale,
        median_depth: built.median_depth,
        alignments: prepared.alignments.clone(),
        metrics: Default::default(),
    };
    let output = write_outputs(out, &built, &report)?;
    print_json(&serde_json::json!({
        "bundle": output.bundle_path.display().to_string(),
        "report": output.report_path.display().to_string(),
    }))
}

fn cmd_eval(
    scene: &mvprior::scene::Scene,
    sorted_views: bool,
    config: &PipelineConfig,
    log: &mut StageLog,
) -> Result<()> {
    let prepared = prepare_scene(scene, config, log)?;
    let built = construct_stacks(&prepared, config, log)?;
    let mut metrics = evaluate_targets(&prepared.scene, &built.fused, log)?;
    if sorted_views {
        metrics.per_view.sort_by_key(|m| m.view_index);
    }
    let report = PipelineReport {
        scene_id: prepared.scene.id.clone(),
        bucket: [prepared.bucket.height, prepared.bucket.width],
        fourier_levels: config.fourier_levels,
        scene_scale: prepared.scene_scale,
        median_depth: built.median_depth,
        alignments: prepared.alignments.clone(),
        metrics,
    };
    print_json(&report)
}

fn write_dilution_csv(rows: &[DilutionRow], sink: &mut dyn Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["n_targets", "mass_baseline", "mass_rescaled"])?;
    for row in rows {
        writer.write_record([
            row.n_targets.to_string(),
            format!("{:?}", row.mass_baseline),
            format!("{:?}", row.mass_rescaled),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_attention_demo(
    n_ref: usize,
    targets: &str,
    dim: usize,
    seed: u64,
    gamma: Option<f64>,
    out: Option<&Path>,
    plot_path: Option<&Path>,
    config: &PipelineConfig,
) -> Result<()> {
    let targets = parse_target_list(targets)?;
    let gamma = gamma.unwrap_or(config.gamma);
    let rows = dilution_experiment(n_ref, &targets, dim, seed, gamma)?;
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)?;
            write_dilution_csv(&rows, &mut file)?;
        }
        None => {
            let mut stdout = std::io::stdout();
            write_dilution_csv(&rows, &mut stdout)?;
        }
    }
    if let Some(path) = plot_path {
        write_png(path, &plot::dilution_chart(&rows, 640, 420))?;
    }
    Ok(())
}

fn cmd_pipeline(
    manifests: &[PathBuf],
    out: &Path,
    cli_config: &Option<PathBuf>,
    flags: &ConfigFlags,
    log: &mut StageLog,
) -> Result<()> {
    let mut summaries = Vec::new();
    for manifest in manifests {
        let (scene, manifest_config) = load_scene(manifest)?;
        let config = resolve_config(cli_config, manifest_config.as_ref(), flags)?;
        let scene_out = if manifests.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(&scene.id)
        };
        let output = run_pipeline(&scene, &config, &scene_out, log)?;
        summaries.push(serde_json::json!({
            "scene_id": output.report.scene_id,
            "bundle": output.bundle_path.display().to_string(),
            "report": output.report_path.display().to_string(),
        }));
    }
    print_json(&summaries)
}

fn run(cli: Cli) -> Result<()> {
    validate_bucket_table()?;
    let mut log = stage_log(&cli.log_file, cli.quiet)?;
    match &cli.command {
        Command::Align { manifest, view, flags } => {
            let (scene, manifest_config) = load_scene(manifest)?;
            let config = resolve_config(&cli.config, manifest_config.as_ref(), flags)?;
            cmd_align(&scene, *view, &config)
        }
        Command::Normalize { manifest, flags } => {
            let (scene, manifest_config) = load_scene(manifest)?;
            let config = resolve_config(&cli.config, manifest_config.as_ref(), flags)?;
            cmd_normalize(scene, &config)
        }
        Command::Warp { manifest, src, dst, out, flags } => {
            let (scene, manifest_config) = load_scene(manifest)?;
            let config = resolve_config(&cli.config, manifest_config.as_ref(), flags)?;
            cmd_warp(scene, *src, *dst, out, &config)
        }
        Command::Stack { manifest, out, flags } => {
            let (scene, manifest_config) = load_scene(manifest)?;
            let config = resolve_config(&cli.config, manifest_config.as_ref(), flags)?;
            cmd_stack(&scene, out, &config, &mut log)
        }
        Command::Eval { manifest, sorted_views, flags } => {
            let (scene, manifest_config) = load_scene(manifest)?;
            let config = resolve_config(&cli.config, manifest_config.as_ref(), flags)?;
            cmd_eval(&scene, *sorted_views, &config, &mut log)
        }
        Command::AttentionDemo { n_ref, targets, dim, seed, gamma, out, plot } => {
            let config = resolve_config(&cli.config, None, &ConfigFlags::default())?;
            cmd_attention_demo(
                *n_ref,
                targets,
                *dim,
                *seed,
                *gamma,
                out.as_deref(),
                plot.as_deref(),
                &config,
            )
        }
        Command::Pipeline { manifest, out, flags } => {
            cmd_pipeline(manifest, out, &cli.config, flags, &mut log)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(e.exit_code());
    }
}
