//! End-to-end checks of the `worldcast` binary: exit codes, output
//! trees, and the JSON the reporting subcommands print.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use worldcast::io::{read_pbm, read_ply, write_ply, write_ppm, write_trajectory, ProjectManifest};
use worldcast::synthworld::{make_trajectory, sample_cloud, SceneSpec, TrajectorySpec};
use worldcast::{ColorPolicy, Frame, Intrinsics, WorldCloud};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_worldcast"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary spawns")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn help_and_version_exit_zero() {
    let out = run(&["--help"]);
    assert_exit(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["simulate", "guide", "stereo", "losses", "metrics", "gradcheck", "netspec"] {
        assert!(text.contains(sub), "--help does not mention {sub}");
    }
    let out = run(&["--version"]);
    assert_exit(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("worldcast"));
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["transmogrify"]);
    assert_exit(&out, 1);
    assert!(!out.stderr.is_empty(), "usage error printed nothing");
    let out = run(&["guide"]);
    assert_exit(&out, 1);
}

#[test]
fn data_errors_exit_two() {
    let out = run(&["guide", "--manifest", "/nonexistent/project.json"]);
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = run(&["netspec", "--role", "nonsense"]);
    assert_exit(&out, 2);
}

#[test]
fn gradcheck_reports_all_pass() {
    let out = run(&["gradcheck", "--seed", "7"]);
    assert_exit(&out, 0);
    let reports = stdout_json(&out);
    let reports = reports.as_array().expect("array of reports");
    assert!(reports.len() >= 10, "only {} reports", reports.len());
    for r in reports {
        assert_eq!(r["passed"], Value::Bool(true), "failing report: {r}");
    }
    for op in ["conv2d", "partial_conv2d", "multi_spade", "perceptual", "world_consistency"] {
        assert!(reports.iter().any(|r| r["op"] == *op), "no report for {op}");
    }
}

#[test]
fn netspec_emit_and_validate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let out = run(&["netspec", "--role", "generator", "--out", spec.to_str().unwrap()]);
    assert_exit(&out, 0);
    let out = run(&["netspec", "--validate", spec.to_str().unwrap()]);
    assert_exit(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: Generator"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{}").unwrap();
    let out = run(&["netspec", "--validate", bad.to_str().unwrap()]);
    assert_exit(&out, 2);
}

/// Quantized colors so a PPM read/write cycle is lossless.
fn quantized_frame(w: usize, h: usize, salt: usize) -> Frame {
    let data = (0..w * h * 3).map(|i| ((salt * 31 + i) % 256) as f64 / 255.0).collect();
    Frame::from_rgb(w, h, data).unwrap()
}

fn save_manifest(manifest: &ProjectManifest, path: &Path) {
    manifest.save(path).unwrap();
}

#[test]
fn guide_runs_from_stored_frames_and_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let intr = Intrinsics::centered(12.0, 16, 16).unwrap();
    let cams = make_trajectory(
        &TrajectorySpec::Linear { step: [0.01, 0.0, 0.02], frames: 3 },
        intr,
    )
    .unwrap();
    write_trajectory(&cams, &root.join("traj.json")).unwrap();
    fs::create_dir(root.join("frames")).unwrap();
    for t in 0..3 {
        let frame = quantized_frame(16, 16, t);
        write_ppm(&frame, &root.join(format!("frames/frame_{t:04}.ppm"))).unwrap();
    }
    let cloud = sample_cloud(&SceneSpec::demo(), 150.0, 2);
    write_ply(&cloud, &root.join("cloud.ply")).unwrap();
    save_manifest(
        &ProjectManifest {
            scene: None,
            cloud: Some("cloud.ply".into()),
            trajectory: "traj.json".into(),
            frames_dir: Some("frames".into()),
            output_dir: "out".into(),
            density: 1.0,
            seed: 0,
            policy: ColorPolicy::FirstWriteWins,
        },
        &root.join("project.json"),
    );

    let out = run(&["guide", "--manifest", root.join("project.json").to_str().unwrap()]);
    assert_exit(&out, 0);

    let outdir = root.join("out");
    for t in 0..3 {
        for name in [
            format!("guidance_{t:04}.pfm"),
            format!("guidance_{t:04}.ppm"),
            format!("guidancevalid_{t:04}.pbm"),
            format!("guidancedepth_{t:04}.pfm"),
            format!("frame_{t:04}.pfm"),
            format!("frame_{t:04}.ppm"),
        ] {
            assert!(outdir.join(&name).is_file(), "missing {name}");
        }
    }
    // No scene means no ground-truth depth, semantics, or flow.
    assert!(!outdir.join("depth_0000.pfm").exists());
    assert!(!outdir.join("sem_0000.pgm").exists());
    assert!(!outdir.join("flow_0000.pfm").exists());

    // The world starts uncolorized, so the first guidance is all-invalid.
    assert_eq!(read_pbm(&outdir.join("guidancevalid_0000.pbm")).unwrap().count(), 0);
    // Stored frames pass through untouched.
    assert_eq!(
        fs::read(outdir.join("frame_0000.ppm")).unwrap(),
        fs::read(root.join("frames/frame_0000.ppm")).unwrap()
    );
    let finished = read_ply(&outdir.join("cloud.ply")).unwrap();
    assert_eq!(finished.len(), cloud.len());
    assert!(finished.colorized_count() > 0, "guide colorized nothing");

    let report: Value =
        serde_json::from_str(&fs::read_to_string(outdir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["frames"], Value::from(3));
    assert_eq!(report["cloud_points"], Value::from(cloud.len()));
}

#[test]
fn guide_handles_an_empty_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let intr = Intrinsics::centered(12.0, 16, 16).unwrap();
    let cams =
        make_trajectory(&TrajectorySpec::Linear { step: [0.0, 0.0, 0.01], frames: 2 }, intr)
            .unwrap();
    write_trajectory(&cams, &root.join("traj.json")).unwrap();
    fs::create_dir(root.join("frames")).unwrap();
    for t in 0..2 {
        write_ppm(&quantized_frame(16, 16, t), &root.join(format!("frames/frame_{t:04}.ppm")))
            .unwrap();
    }
    write_ply(&WorldCloud::new(Vec::new()), &root.join("empty.ply")).unwrap();
    save_manifest(
        &ProjectManifest {
            scene: None,
            cloud: Some("empty.ply".into()),
            trajectory: "traj.json".into(),
            frames_dir: Some("frames".into()),
            output_dir: "out".into(),
            density: 1.0,
            seed: 0,
            policy: ColorPolicy::FirstWriteWins,
        },
        &root.join("project.json"),
    );
    let out = run(&["guide", "--manifest", root.join("project.json").to_str().unwrap()]);
    assert_exit(&out, 0);
    for t in 0..2 {
        let valid = read_pbm(&root.join(format!("out/guidancevalid_{t:04}.pbm"))).unwrap();
        assert_eq!(valid.count(), 0, "empty cloud produced valid pixels at step {t}");
    }
    let report: Value =
        serde_json::from_str(&fs::read_to_string(root.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["colorized_points"], Value::from(0));
}

#[test]
fn simulate_reruns_identically_from_its_own_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = run(&[
        "simulate",
        "--out",
        first.to_str().unwrap(),
        "--frames",
        "2",
        "--width",
        "24",
        "--height",
        "24",
        "--focal",
        "18",
        "--motion",
        "orbit",
    ]);
    assert_exit(&out, 0);
    for name in ["scene.json", "trajectory.json", "frame_0001.ppm", "depth_0001.pfm", "sem_0001.pgm"]
    {
        assert!(first.join(name).is_file(), "missing {name}");
    }

    // Feeding the recorded scene and trajectory back reproduces the run.
    let second = dir.path().join("second");
    let out = run(&[
        "simulate",
        "--out",
        second.to_str().unwrap(),
        "--scene",
        first.join("scene.json").to_str().unwrap(),
        "--trajectory",
        first.join("trajectory.json").to_str().unwrap(),
        "--width",
        "24",
        "--height",
        "24",
        "--focal",
        "18",
    ]);
    assert_exit(&out, 0);
    for t in 0..2 {
        for (stem, ext) in [("frame", "pfm"), ("frame", "ppm"), ("sem", "pgm")] {
            let name = format!("{stem}_{t:04}.{ext}");
            assert_eq!(
                fs::read(first.join(&name)).unwrap(),
                fs::read(second.join(&name)).unwrap(),
                "{name} differs after the trajectory round-trip"
            );
        }
    }
}

#[test]
fn stereo_reports_zero_cross_view_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "stereo",
        "--out",
        out_dir.to_str().unwrap(),
        "--frames",
        "3",
        "--density",
        "3000",
        "--width",
        "24",
        "--height",
        "24",
        "--focal",
        "18",
    ]);
    assert_exit(&out, 0);
    for name in ["left_0000.pfm", "right_0000.pfm", "cloud.ply", "stereo_report.json"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("stereo_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["frames"], Value::from(3));
    assert_eq!(report["max_cross_view_delta_rgb"], Value::from(0.0));
    let steps = report["steps"].as_array().unwrap();
    assert!(
        steps.iter().skip(1).all(|s| s["mutually_visible"].as_u64().unwrap() > 0),
        "no mutually visible points after the first colorize"
    );
}

/// A scene-backed round-trip guide run; the trajectory returns to its
/// start, so the run is scoreable by both `metrics` and `losses`.
fn round_trip_run(root: &Path) {
    let scene = SceneSpec::demo();
    fs::write(root.join("scene.json"), serde_json::to_string_pretty(&scene).unwrap()).unwrap();
    let cams = make_trajectory(
        &TrajectorySpec::RoundTrip { step: [0.02, 0.0, 0.03], frames: 3 },
        Intrinsics::centered(24.0, 32, 32).unwrap(),
    )
    .unwrap();
    write_trajectory(&cams, &root.join("traj.json")).unwrap();
    save_manifest(
        &ProjectManifest {
            scene: Some("scene.json".into()),
            cloud: None,
            trajectory: "traj.json".into(),
            frames_dir: None,
            output_dir: "out".into(),
            density: 900.0,
            seed: 6,
            policy: ColorPolicy::FirstWriteWins,
        },
        &root.join("project.json"),
    );
    let out = run(&["guide", "--manifest", root.join("project.json").to_str().unwrap()]);
    assert_exit(&out, 0);
}

#[test]
fn metrics_scores_a_round_trip_run_as_drift_free() {
    let dir = tempfile::tempdir().unwrap();
    round_trip_run(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["metrics", "--dir", out_dir.to_str().unwrap(), "--json"]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    assert_eq!(report["frames"], Value::from(5));
    // The final camera equals the first, so every valid guidance pixel
    // still carries the color pinned from frame zero.
    assert_eq!(report["long_term"]["delta_rgb"], Value::from(0.0));
    assert_eq!(report["long_term"]["delta_lab"], Value::from(0.0));
    assert!(report["long_term"]["pixels"].as_u64().unwrap() > 0);
    assert!(report["short_term"].as_f64().unwrap() >= 0.0);

    // The table form succeeds on the same run.
    let out = run(&["metrics", "--dir", out_dir.to_str().unwrap()]);
    assert_exit(&out, 0);
    assert!(!out.stdout.is_empty());
}

#[test]
fn losses_totals_match_their_own_terms() {
    let dir = tempfile::tempdir().unwrap();
    round_trip_run(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["losses", "--dir", out_dir.to_str().unwrap()]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    let term = |k: &str| report[k].as_f64().unwrap_or_else(|| panic!("missing {k}"));
    for k in
        ["gan_image", "gan_video", "feature_matching", "perceptual", "flow_warp", "world_consistency"]
    {
        assert!(term(k).is_finite(), "{k} is not finite");
    }
    let expected = 1.0 * term("gan_image")
        + 1.0 * term("gan_video")
        + 10.0 * term("feature_matching")
        + 10.0 * term("perceptual")
        + 10.0 * term("flow_warp")
        + 10.0 * term("world_consistency");
    assert_eq!(term("total"), expected, "total does not recombine from the printed terms");

    // Explicit weights override the defaults.
    let out = run(&[
        "losses",
        "--dir",
        out_dir.to_str().unwrap(),
        "--weights",
        "0,0,0,0,0,1",
    ]);
    assert_exit(&out, 0);
    let report = stdout_json(&out);
    assert_eq!(
        report["total"].as_f64().unwrap(),
        report["world_consistency"].as_f64().unwrap()
    );
}
