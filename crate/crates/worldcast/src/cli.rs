//! Command-line surface: argument parsing, dispatch, exit codes.
//!
//! Exit 0 on success, 1 on usage errors, 2 on data errors. Every writer
//! is deterministic, so rerunning a subcommand with identical inputs
//! produces a byte-identical output tree.

use crate::flow::{motion_field, FlowField};
use crate::geometry::{Camera, Intrinsics, Pose};
use crate::image::Frame;
use crate::io::{
    read_pfm, read_ply, read_trajectory, write_pbm, write_pfm, write_pgm, write_ply, write_ppm,
    write_trajectory, PfmImage, ProjectManifest,
};
use crate::losses::{
    feature_matching, flow_warp_loss_from_flow, hinge_g, temporal_windows, total_objective,
    world_consistency_loss, FeatureExtractor, LossError, LossWeights,
};
use crate::metrics::{fb_consistency, short_term_consistency, ConsistencyReport};
use crate::synthworld::{
    make_trajectory, one_hot_labels, render_gt, sample_cloud, GtFrame, SceneSpec, TrajectorySpec,
};
use crate::tensor::{concat_channels, Discriminator, NetworkRole, NetworkSpec, Tensor};
use crate::world::{ColorPolicy, GuidanceImage, WorldCloud};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// Parses `argv` and runs one subcommand, mapping outcomes to the exit
/// code contract.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

#[derive(Parser)]
#[command(
    name = "worldcast",
    version,
    about = "Persistent point-cloud worlds and guidance images for video synthesis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render exact ground truth (frames, depth, semantics) for a scene.
    Simulate(SimulateArgs),
    /// Run the guidance loop over a trajectory, colorizing the world.
    Guide(GuideArgs),
    /// Render left/right guidance from one shared world.
    Stereo(StereoArgs),
    /// Score a finished run with the full training objective.
    Losses(LossesArgs),
    /// Measure long-term and short-term consistency of a finished run.
    Metrics(MetricsArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Emit or validate a toy network spec.
    Netspec(NetspecArgs),
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => run_simulate(args),
        Command::Guide(args) => run_guide(args),
        Command::Stereo(args) => run_stereo(args),
        Command::Losses(args) => run_losses(args),
        Command::Metrics(args) => run_metrics(args),
        Command::Gradcheck(args) => run_gradcheck(args),
        Command::Netspec(args) => run_netspec(args),
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Scene JSON; the built-in demo scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Camera trajectory JSON; built from --motion when omitted.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Camera path when --trajectory is omitted.
    #[arg(long, default_value = "linear", value_parser = ["linear", "orbit", "round-trip"])]
    motion: String,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// Per-frame camera translation "x,y,z" for linear and round-trip paths.
    #[arg(long, default_value = "0.05,0,0")]
    step: String,
    /// Orbit center "x,y,z".
    #[arg(long, default_value = "0,0,3")]
    orbit_center: String,
    #[arg(long, default_value_t = 3.0)]
    orbit_radius: f64,
    #[arg(long, default_value_t = 20.0)]
    orbit_sweep: f64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 48.0)]
    focal: f64,
}

#[derive(Args)]
struct GuideArgs {
    /// Project manifest naming the scene or cloud, trajectory, and outputs.
    #[arg(long)]
    manifest: PathBuf,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StereoArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Scene JSON; the built-in demo scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Right-eye offset along the camera x axis.
    #[arg(long, default_value_t = 0.08)]
    baseline: f64,
    /// Per-frame rig translation "x,y,z".
    #[arg(long, default_value = "0,0,0.02")]
    step: String,
    #[arg(long, default_value_t = 20000.0)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 48.0)]
    focal: f64,
}

#[derive(Args)]
struct LossesArgs {
    /// A run directory produced by `guide`.
    #[arg(long)]
    dir: PathBuf,
    /// Six comma-separated term weights; 1,1,10,10,10,10 when omitted.
    #[arg(long)]
    weights: Option<String>,
    /// Seeds the scoring networks (discriminators and feature extractor).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MetricsArgs {
    /// A run directory produced by `guide`.
    #[arg(long)]
    dir: PathBuf,
    /// Emit JSON instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct NetspecArgs {
    /// Validate an existing spec file instead of emitting one.
    #[arg(long)]
    validate: Option<PathBuf>,
    /// Network role: label_embed, flow_embed, image_encoder, seg_encoder,
    /// generator, image_discriminator, or video_discriminator.
    #[arg(long, default_value = "generator")]
    role: String,
    #[arg(long, default_value_t = 4)]
    label_channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write to a file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_triple(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("cannot parse {s:?} as three numbers"))?;
    let [x, y, z] = parts[..] else { bail!("expected three comma-separated numbers, got {s:?}") };
    Ok([x, y, z])
}

fn parse_weights(s: &str) -> Result<LossWeights> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("cannot parse {s:?} as six numbers"))?;
    let [a, b, c, d, e, f] = parts[..] else { bail!("expected six comma-separated weights") };
    Ok(LossWeights {
        gan_image: a,
        gan_video: b,
        feature_matching: c,
        perceptual: d,
        flow_warp: e,
        world_consistency: f,
    })
}

fn load_scene_or_demo(path: &Option<PathBuf>) -> Result<SceneSpec> {
    match path {
        None => Ok(SceneSpec::demo()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let parsed: SceneSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok(SceneSpec::new(parsed.quads, parsed.background)?)
        }
    }
}

fn numbered(dir: &Path, stem: &str, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_{index:04}.{ext}"))
}

fn count_numbered(dir: &Path, stem: &str, ext: &str) -> usize {
    let mut n = 0;
    while numbered(dir, stem, n, ext).is_file() {
        n += 1;
    }
    n
}

fn frame_tensor(frame: &Frame) -> Result<Tensor> {
    Ok(Tensor::from_vec(&[1, 3, frame.height(), frame.width()], frame.to_planar())?)
}

/// Writes one ground-truth frame's artifacts under `dir` at `index`.
fn write_gt(dir: &Path, index: usize, gt: &GtFrame) -> Result<()> {
    let (w, h) = (gt.width(), gt.height());
    write_pfm(&PfmImage::from_frame(&gt.rgb), &numbered(dir, "frame", index, "pfm"))?;
    write_ppm(&gt.rgb, &numbered(dir, "frame", index, "ppm"))?;
    write_pfm(&PfmImage::from_depth(w, h, &gt.depth)?, &numbered(dir, "depth", index, "pfm"))?;
    let ids: Vec<usize> = gt.semantics.iter().map(|&v| v as usize).collect();
    write_pgm(w, h, &ids, &numbered(dir, "sem", index, "pgm"))?;
    Ok(())
}

fn write_guidance(dir: &Path, stem: &str, index: usize, g: &GuidanceImage) -> Result<()> {
    let frame = g.to_frame();
    write_pfm(&PfmImage::from_frame(&frame), &numbered(dir, stem, index, "pfm"))?;
    write_ppm(&frame, &numbered(dir, stem, index, "ppm"))?;
    write_pbm(g.valid(), &dir.join(format!("{stem}valid_{index:04}.pbm")))?;
    write_pfm(
        &PfmImage::from_depth(g.width(), g.height(), g.depth())?,
        &dir.join(format!("{stem}depth_{index:04}.pfm")),
    )?;
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let scene = load_scene_or_demo(&args.scene)?;
    let intr = Intrinsics::centered(args.focal, args.width, args.height)?;
    let cams = match &args.trajectory {
        Some(p) => read_trajectory(p)?,
        None => {
            let spec = match args.motion.as_str() {
                "orbit" => TrajectorySpec::Orbit {
                    center: parse_triple(&args.orbit_center)?,
                    radius: args.orbit_radius,
                    frames: args.frames,
                    sweep_degrees: args.orbit_sweep,
                },
                "round-trip" => {
                    TrajectorySpec::RoundTrip { step: parse_triple(&args.step)?, frames: args.frames }
                }
                _ => TrajectorySpec::Linear { step: parse_triple(&args.step)?, frames: args.frames },
            };
            make_trajectory(&spec, intr)?
        }
    };
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join("scene.json"), serde_json::to_string_pretty(&scene)?)
        .with_context(|| "writing scene.json".to_string())?;
    write_trajectory(&cams, &args.out.join("trajectory.json"))?;
    for (t, cam) in cams.iter().enumerate() {
        let gt = render_gt(&scene, cam);
        write_gt(&args.out, t, &gt)?;
    }
    println!("simulated {} frames into {}", cams.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct GuideStep {
    valid_pixels: usize,
    points_written: usize,
}

#[derive(Serialize)]
struct GuideReport {
    frames: usize,
    seed: u64,
    density: f64,
    policy: ColorPolicy,
    cloud_points: usize,
    colorized_points: usize,
    steps: Vec<GuideStep>,
}

/// Reads frame `index` from a directory, preferring float over preview.
fn read_stored_frame(dir: &Path, index: usize) -> Result<Frame> {
    let float = numbered(dir, "frame", index, "pfm");
    if float.is_file() {
        return Ok(read_pfm(&float)?.to_frame()?);
    }
    let preview = numbered(dir, "frame", index, "ppm");
    if preview.is_file() {
        return Ok(crate::io::read_ppm(&preview)?);
    }
    bail!("no frame {index:04} under {}", dir.display());
}

fn run_guide(args: GuideArgs) -> Result<()> {
    let mut manifest = ProjectManifest::load(&args.manifest)
        .with_context(|| format!("loading {}", args.manifest.display()))?;
    if let Some(seed) = args.seed {
        manifest.seed = seed;
    }
    let cams = manifest.load_trajectory()?;
    if cams.is_empty() {
        bail!("trajectory is empty");
    }
    let scene = match manifest.scene.is_some() {
        true => Some(manifest.load_scene()?),
        false => None,
    };
    let mut world = match &manifest.cloud {
        Some(p) => read_ply(p)?,
        None => sample_cloud(
            scene.as_ref().expect("validate() guarantees a world source"),
            manifest.density,
            manifest.seed,
        ),
    };
    let out = &manifest.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let gts: Vec<GtFrame> = match &scene {
        Some(s) => cams.iter().map(|cam| render_gt(s, cam)).collect(),
        None => Vec::new(),
    };
    let mut steps = Vec::with_capacity(cams.len());
    for (t, cam) in cams.iter().enumerate() {
        let g = world.render_guidance(cam);
        write_guidance(out, "guidance", t, &g)?;
        let frame = match &manifest.frames_dir {
            Some(dir) => read_stored_frame(dir, t)?,
            None => gts[t].rgb.clone(),
        };
        write_pfm(&PfmImage::from_frame(&frame), &numbered(out, "frame", t, "pfm"))?;
        write_ppm(&frame, &numbered(out, "frame", t, "ppm"))?;
        if let Some(gt) = gts.get(t) {
            let (w, h) = (gt.width(), gt.height());
            write_pfm(&PfmImage::from_depth(w, h, &gt.depth)?, &numbered(out, "depth", t, "pfm"))?;
            let ids: Vec<usize> = gt.semantics.iter().map(|&v| v as usize).collect();
            write_pgm(w, h, &ids, &numbered(out, "sem", t, "pgm"))?;
        }
        let written = world.colorize(cam, &frame, manifest.policy)?;
        steps.push(GuideStep { valid_pixels: g.valid_count(), points_written: written });
    }
    // Backward flow for each consecutive pair: flow k maps frame k+1 back
    // to frame k. Needs true depth, so it is only written for scene runs.
    if !gts.is_empty() {
        for t in 1..cams.len() {
            let (w, h) = (cams[t].intrinsics.width, cams[t].intrinsics.height);
            let (flow, valid) = motion_field(&gts[t].depth, w, h, &cams[t], &cams[t - 1])?;
            write_pfm(&PfmImage::from_flow(&flow), &numbered(out, "flow", t - 1, "pfm"))?;
            write_pbm(&valid, &dir_mask_path(out, t - 1))?;
        }
    }
    write_ply(&world, &out.join("cloud.ply"))?;
    let report = GuideReport {
        frames: cams.len(),
        seed: manifest.seed,
        density: manifest.density,
        policy: manifest.policy,
        cloud_points: world.len(),
        colorized_points: world.colorized_count(),
        steps,
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)
        .with_context(|| "writing report.json".to_string())?;
    println!(
        "guided {} frames, {} of {} points colorized, into {}",
        cams.len(),
        world.colorized_count(),
        world.len(),
        out.display()
    );
    Ok(())
}

fn dir_mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("flowvalid_{index:04}.pbm"))
}

#[derive(Serialize)]
struct StereoStep {
    mutually_visible: usize,
    cross_view_delta_rgb: f64,
    left_valid: usize,
    right_valid: usize,
}

#[derive(Serialize)]
struct StereoReport {
    frames: usize,
    baseline: f64,
    seed: u64,
    density: f64,
    cloud_points: usize,
    max_cross_view_delta_rgb: f64,
    steps: Vec<StereoStep>,
}

/// The same camera shifted by `baseline` along its own x axis.
fn shift_along_camera_x(cam: &Camera, baseline: f64) -> Camera {
    let r = *cam.pose.rotation();
    let t = cam.pose.translation() - nalgebra::Vector3::new(baseline, 0.0, 0.0);
    Camera::new(cam.intrinsics, Pose::new(r, t).expect("rotation unchanged"))
}

/// Cross-view color agreement over points visible in both views. Both
/// pixels show the same stored point color, so the mean must be zero.
fn cross_view_delta(
    world: &WorldCloud,
    left: &Camera,
    right: &Camera,
    gl: &GuidanceImage,
    gr: &GuidanceImage,
) -> (usize, f64) {
    let vis_l = world.point_visibility(left);
    let vis_r = world.point_visibility(right);
    let mut count = 0usize;
    let mut acc = 0.0;
    for i in 0..world.len() {
        let (Some((lx, ly)), Some((rx, ry))) = (vis_l[i], vis_r[i]) else { continue };
        if !world.colorized()[i] {
            continue;
        }
        let a = gl.pixel(lx, ly);
        let b = gr.pixel(rx, ry);
        acc += (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>() / 3.0;
        count += 1;
    }
    (count, if count == 0 { 0.0 } else { 255.0 * acc / count as f64 })
}

fn run_stereo(args: StereoArgs) -> Result<()> {
    let scene = load_scene_or_demo(&args.scene)?;
    let intr = Intrinsics::centered(args.focal, args.width, args.height)?;
    let left_cams = make_trajectory(
        &TrajectorySpec::Linear { step: parse_triple(&args.step)?, frames: args.frames },
        intr,
    )?;
    let right_cams: Vec<Camera> =
        left_cams.iter().map(|c| shift_along_camera_x(c, args.baseline)).collect();
    let mut world = sample_cloud(&scene, args.density, args.seed);
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut steps = Vec::with_capacity(args.frames);
    let mut worst = 0.0f64;
    for t in 0..args.frames {
        let (gl, gr) = crate::world::shared_stereo_guidance(&world, &left_cams[t], &right_cams[t]);
        write_guidance(&args.out, "left", t, &gl)?;
        write_guidance(&args.out, "right", t, &gr)?;
        let (mutual, delta) = cross_view_delta(&world, &left_cams[t], &right_cams[t], &gl, &gr);
        worst = worst.max(delta);
        steps.push(StereoStep {
            mutually_visible: mutual,
            cross_view_delta_rgb: delta,
            left_valid: gl.valid_count(),
            right_valid: gr.valid_count(),
        });
        let left_gt = render_gt(&scene, &left_cams[t]);
        let right_gt = render_gt(&scene, &right_cams[t]);
        world.colorize(&left_cams[t], &left_gt.rgb, ColorPolicy::FirstWriteWins)?;
        world.colorize(&right_cams[t], &right_gt.rgb, ColorPolicy::FirstWriteWins)?;
    }
    write_ply(&world, &args.out.join("cloud.ply"))?;
    let report = StereoReport {
        frames: args.frames,
        baseline: args.baseline,
        seed: args.seed,
        density: args.density,
        cloud_points: world.len(),
        max_cross_view_delta_rgb: worst,
        steps,
    };
    fs::write(args.out.join("stereo_report.json"), serde_json::to_string_pretty(&report)?)
        .with_context(|| "writing stereo_report.json".to_string())?;
    println!(
        "stereo run of {} frames, max cross-view delta rgb {}, into {}",
        args.frames,
        worst,
        args.out.display()
    );
    Ok(())
}

/// Everything `losses` and `metrics` read back from a run directory.
struct RunDir {
    frames: Vec<Frame>,
    guidance: Vec<GuidanceImage>,
    flows: Vec<FlowField>,
    semantics: Vec<Vec<usize>>,
}

fn read_run_dir(dir: &Path) -> Result<RunDir> {
    let n = count_numbered(dir, "frame", "pfm");
    if n == 0 {
        bail!("no frame_0000.pfm under {}", dir.display());
    }
    let mut frames = Vec::with_capacity(n);
    let mut guidance = Vec::with_capacity(n);
    for t in 0..n {
        frames.push(read_pfm(&numbered(dir, "frame", t, "pfm"))?.to_frame()?);
        let rgb = read_pfm(&numbered(dir, "guidance", t, "pfm"))?.to_frame()?;
        let valid = crate::io::read_pbm(&dir.join(format!("guidancevalid_{t:04}.pbm")))?;
        let depth = read_pfm(&dir.join(format!("guidancedepth_{t:04}.pfm")))?.to_depth()?;
        let g = GuidanceImage::from_parts(
            rgb.width(),
            rgb.height(),
            rgb.data().to_vec(),
            valid,
            depth,
        )
        .map_err(|e| anyhow!("guidance {t:04}: {e}"))?;
        guidance.push(g);
    }
    let mut flows = Vec::new();
    for t in 0..count_numbered(dir, "flow", "pfm") {
        flows.push(read_pfm(&numbered(dir, "flow", t, "pfm"))?.to_flow()?);
    }
    let mut semantics = Vec::new();
    if numbered(dir, "sem", 0, "pgm").is_file() {
        for t in 0..n {
            let (_, _, ids) = crate::io::read_pgm(&numbered(dir, "sem", t, "pgm"))?;
            semantics.push(ids);
        }
    }
    Ok(RunDir { frames, guidance, flows, semantics })
}

fn run_losses(args: LossesArgs) -> Result<()> {
    let run = read_run_dir(&args.dir)?;
    let weights = match &args.weights {
        Some(s) => parse_weights(s)?,
        None => LossWeights::default(),
    };
    let n = run.frames.len();
    let real: Vec<Tensor> =
        run.frames.iter().map(frame_tensor).collect::<Result<_>>()?;
    let fake: Vec<Tensor> =
        run.guidance.iter().map(|g| frame_tensor(&g.to_frame())).collect::<Result<_>>()?;

    // Conditional discriminator input: frame concatenated with one-hot
    // labels when the run recorded semantics, bare frames otherwise.
    let classes = run
        .semantics
        .iter()
        .flatten()
        .copied()
        .max()
        .map_or(0, |m| m + 1);
    let cond = |t: usize, x: &Tensor| -> Result<Tensor> {
        if classes == 0 {
            return Ok(x.clone());
        }
        let ids: Vec<u32> = run.semantics[t].iter().map(|&v| v as u32).collect();
        let f = &run.frames[t];
        let labels = one_hot_labels(&ids, f.width(), f.height(), classes)?;
        Ok(concat_channels(&[x, &labels])?)
    };

    let img_spec = NetworkSpec::toy(NetworkRole::ImageDiscriminator, classes, args.seed);
    let img_d = Discriminator::new(&img_spec)?;
    let vid_spec = NetworkSpec::toy(NetworkRole::VideoDiscriminator, 0, args.seed.wrapping_add(1));
    let vid_d = Discriminator::new(&vid_spec)?;
    let ext = FeatureExtractor::seeded(args.seed.wrapping_add(2));

    let mut fake_logits = Vec::new();
    let mut fm_acc = 0.0;
    let mut perceptual_acc = 0.0;
    let mut world_acc = 0.0;
    for t in 0..n {
        let real_in = cond(t, &real[t])?;
        let fake_in = cond(t, &fake[t])?;
        let real_out = img_d.discriminate(&real_in)?;
        let fake_out = img_d.discriminate(&fake_in)?;
        fm_acc += feature_matching(&real_out.features, &fake_out.features)?;
        perceptual_acc += crate::losses::perceptual_loss(&ext, &real[t], &fake[t])?;
        world_acc += world_consistency_loss(&run.frames[t], &run.guidance[t])?;
        fake_logits.extend(fake_out.logits);
    }
    let gan_image = hinge_g(&fake_logits)?;

    let windows = match temporal_windows(&fake, vid_spec.video_window) {
        Ok(w) => w,
        Err(LossError::WindowTooShort { .. }) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let gan_video = if windows.is_empty() {
        0.0
    } else {
        let mut logits = Vec::new();
        for w in &windows {
            logits.extend(vid_d.discriminate(w)?.logits);
        }
        hinge_g(&logits)?
    };

    let flow_warp = if run.flows.is_empty() {
        0.0
    } else {
        if run.flows.len() != n - 1 {
            bail!("{} flows for {} frames", run.flows.len(), n);
        }
        let mut acc = 0.0;
        for t in 0..n - 1 {
            acc += flow_warp_loss_from_flow(&run.frames[t + 1], &run.frames[t], &run.flows[t])?;
        }
        acc / (n - 1) as f64
    };

    let report = total_objective(
        gan_image,
        gan_video,
        fm_acc / n as f64,
        perceptual_acc / n as f64,
        flow_warp,
        world_acc / n as f64,
        &weights,
    );
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_metrics(args: MetricsArgs) -> Result<()> {
    let run = read_run_dir(&args.dir)?;
    let n = run.frames.len();
    if run.flows.len() != n - 1 {
        bail!("{} flows for {} frames", run.flows.len(), n);
    }
    let short_term = short_term_consistency(&run.frames, &run.flows)?;
    let last = &run.guidance[n - 1];
    let long_term = fb_consistency(&run.frames[0], &last.to_frame(), Some(last.valid()))?;
    let report = ConsistencyReport { frames: n, long_term, short_term };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let reports = crate::gradcheck::run_suite(args.seed)?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} wrt {}", r.op, r.wrt))
        .collect();
    if !failed.is_empty() {
        bail!("gradient check failed: {}", failed.join(", "));
    }
    Ok(())
}

fn parse_role(s: &str) -> Result<NetworkRole> {
    Ok(match s {
        "label_embed" => NetworkRole::LabelEmbed,
        "flow_embed" => NetworkRole::FlowEmbed,
        "image_encoder" => NetworkRole::ImageEncoder,
        "seg_encoder" => NetworkRole::SegEncoder,
        "generator" => NetworkRole::Generator,
        "image_discriminator" => NetworkRole::ImageDiscriminator,
        "video_discriminator" => NetworkRole::VideoDiscriminator,
        other => bail!(
            "unknown role {other:?}; expected label_embed, flow_embed, image_encoder, \
             seg_encoder, generator, image_discriminator, or video_discriminator"
        ),
    })
}

fn run_netspec(args: NetspecArgs) -> Result<()> {
    if let Some(path) = &args.validate {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec: NetworkSpec =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        spec.validate()?;
        println!(
            "ok: {:?} with {} stages, {}x{} frames, window {}",
            spec.role,
            spec.stages.len(),
            spec.frame_width,
            spec.frame_height,
            spec.video_window
        );
        return Ok(());
    }
    let spec = NetworkSpec::toy(parse_role(&args.role)?, args.label_channels, args.seed);
    spec.validate()?;
    let text = serde_json::to_string_pretty(&spec)?;
    match &args.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triples_and_weights_parse_strictly() {
        assert_eq!(parse_triple("1,2.5,-3").unwrap(), [1.0, 2.5, -3.0]);
        assert!(parse_triple("1,2").is_err());
        assert!(parse_triple("a,b,c").is_err());
        let w = parse_weights("1,1,10,10,10,10").unwrap();
        assert_eq!(w, LossWeights::default());
        assert!(parse_weights("1,2,3").is_err());
    }

    #[test]
    fn roles_parse_by_snake_case_name() {
        assert_eq!(parse_role("generator").unwrap(), NetworkRole::Generator);
        assert_eq!(parse_role("video_discriminator").unwrap(), NetworkRole::VideoDiscriminator);
        assert!(parse_role("Generator").is_err());
    }

    #[test]
    fn stereo_shift_moves_the_center_along_camera_x() {
        let cam = Camera::new(Intrinsics::centered(48.0, 64, 64).unwrap(), Pose::identity());
        let right = shift_along_camera_x(&cam, 0.5);
        let d = right.pose.center() - cam.pose.center();
        assert!((d - nalgebra::Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn numbered_paths_are_zero_padded() {
        let p = numbered(Path::new("/tmp/x"), "frame", 12, "pfm");
        assert_eq!(p, Path::new("/tmp/x/frame_0012.pfm"));
    }
}
