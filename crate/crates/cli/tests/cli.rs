//! End-to-end tests of the `mvprior` binary: subcommand behavior, file
//! outputs, and exit codes (0 success, 2 validation, 3 stage failure).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvprior::synth::{write_fixture, BandSceneParams};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_mvprior")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(dir: &Path) -> PathBuf {
    let params = BandSceneParams {
        width: 512,
        height: 320,
        band_rows: 40,
        focal: 280.0,
        ..BandSceneParams::default()
    };
    write_fixture(dir, &params).expect("fixture written")
}

#[test]
fn pipeline_writes_bundle_report_and_previews() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let out = dir.path().join("out");
    let output = run(&[
        "pipeline",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
        "--seed",
        "7",
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    assert!(out.join("bundle.mvpb").exists());
    assert!(out.join("preview_view2.png").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scene_id"], "band-scene");
    assert_eq!(report["bucket"], serde_json::json!([320, 512]));
    let metrics = &report["metrics"][0];
    assert_eq!(metrics["psnr_infinite"], serde_json::json!(true));
    assert_eq!(metrics["ssim"], serde_json::json!(1.0));
    assert_eq!(metrics["coverage"], serde_json::json!(1.0));

    // stdout carries the per-scene summary.
    let summary: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(summary[0]["scene_id"], "band-scene");
}

#[test]
fn align_prints_recovered_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let output = run(&["align", "--manifest", manifest.to_str().unwrap(), "--quiet"]);
    assert!(output.status.success());
    let results: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(results.as_array().unwrap().len(), 2);
    assert_eq!(results[0]["scale"], serde_json::json!(2.0));
    assert_eq!(results[0]["shift"], serde_json::json!(0.25));
    assert_eq!(results[0]["clamped"], serde_json::json!(false));
}

#[test]
fn normalize_reports_unit_scale_for_small_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let output = run(&["normalize", "--manifest", manifest.to_str().unwrap(), "--quiet"]);
    assert!(output.status.success());
    let value: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(value["scale"], serde_json::json!(1.0));
}

#[test]
fn warp_writes_container_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let out = dir.path().join("warp-out");
    let output = run(&[
        "warp",
        "--manifest",
        manifest.to_str().unwrap(),
        "--src",
        "1",
        "--dst",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let container = out.join("warp_1_to_2.mvpb");
    assert!(container.exists());
    assert!(out.join("warp_1_to_2.png").exists());

    let bundle = mvprior::io::ArrayBundle::read_from(&container).unwrap();
    for name in ["rgb", "ccm", "zbuffer", "mask", "srcidx"] {
        assert!(bundle.get(name).is_some(), "missing array {name}");
    }
}

#[test]
fn stack_writes_bundle_without_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let out = dir.path().join("stack-out");
    let output = run(&[
        "stack",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["metrics"].as_array().unwrap().is_empty());
    assert!(out.join("bundle.mvpb").exists());
}

#[test]
fn eval_prints_metrics_with_both_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    for sorted in [false, true] {
        let mut args = vec!["eval", "--manifest", manifest.to_str().unwrap(), "--quiet"];
        if sorted {
            args.push("--sorted-views");
        }
        let output = run(&args);
        assert!(output.status.success());
        let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
        assert_eq!(report["metrics"][0]["psnr_infinite"], serde_json::json!(true));
    }
}

#[test]
fn attention_demo_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("dilution.csv");
    let plot_path = dir.path().join("dilution.png");
    let output = run(&[
        "attention-demo",
        "--n-ref",
        "2",
        "--targets",
        "0,24,50",
        "--dim",
        "16",
        "--seed",
        "3",
        "--out",
        csv_path.to_str().unwrap(),
        "--plot",
        plot_path.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n_targets,mass_baseline,mass_rescaled"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][1], 1.0);
    assert!(rows[2][1] < rows[1][1], "mass must decay with target count");
    assert!(rows[2][2] > rows[2][1], "rescaling must restore mass");
    assert!(plot_path.exists());
    let img = image::open(&plot_path).unwrap();
    assert_eq!(img.width(), 640);
}

#[test]
fn malformed_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let output = run(&["pipeline", "--manifest", path.to_str().unwrap(), "--out", "x", "--quiet"]);
    assert_eq!(output.status.code(), Some(2));

    let missing = dir.path().join("nope.json");
    let output = run(&["align", "--manifest", missing.to_str().unwrap(), "--quiet"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_samples_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    // Strip the sparse-sample entries so alignment cannot run.
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    for view in doc["views"].as_array_mut().unwrap() {
        view.as_object_mut().unwrap().remove("sparse");
    }
    std::fs::write(&manifest, doc.to_string()).unwrap();
    let out = dir.path().join("out");
    let output = run(&[
        "pipeline",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("align"), "{stderr}");
}

#[test]
fn bad_flag_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let output = run(&[
        "pipeline",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        "x",
        "--bucket",
        "100x100",
        "--quiet",
    ]);
    assert_eq!(output.status.code(), Some(2));

    let output = run(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--gamma",
        "-2",
        "--quiet",
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn config_env_var_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"gamma": -1.0}"#).unwrap();
    // The broken gamma from the env-supplied config must surface...
    let output = Command::new(binary())
        .env("MVPRIOR_CONFIG", &config_path)
        .args(["eval", "--manifest", manifest.to_str().unwrap(), "--quiet"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    // ...unless a CLI flag overrides it.
    let output = Command::new(binary())
        .env("MVPRIOR_CONFIG", &config_path)
        .args([
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--gamma",
            "1.2",
            "--quiet",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
}

#[test]
fn log_file_captures_stage_timings() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path());
    let log_path = dir.path().join("stages.jsonl");
    let out = dir.path().join("out");
    let output = run(&[
        "pipeline",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--log-file",
        log_path.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(&log_path).unwrap();
    let stages: Vec<String> = text
        .lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            v["stage"].as_str().unwrap().to_string()
        })
        .collect();
    for expected in ["align", "resize", "normalize", "ccm", "warp", "stack", "eval", "write"] {
        assert!(stages.iter().any(|s| s == expected), "missing {expected}");
    }
}
