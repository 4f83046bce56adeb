//! The persistent point-cloud world and its guidance renders.
//!
//! A [`WorldCloud`] lives across an entire synthesized sequence. Each step
//! projects every point into the current camera with a z-buffer
//! ([`WorldCloud::render_guidance`]), producing a sparse `GuidanceImage`
//! holding the colors the world has already committed to. After a frame is
//! produced, [`WorldCloud::colorize`] writes its colors back into the cloud
//! so later cameras see them. Points never move and are never removed, so
//! any two views of the same point agree by construction.

use crate::geometry::{project, Camera, Point3};
use crate::image::{Frame, Mask};
use thiserror::Error;

/// Depths closer than this are treated as a tie and resolved by point index.
pub const EPS_TIE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("frame is {frame_w}x{frame_h} but camera expects {cam_w}x{cam_h}")]
    SizeMismatch { frame_w: usize, frame_h: usize, cam_w: usize, cam_h: usize },
    #[error("cloud arrays disagree in length: {0}")]
    BadArrays(String),
    #[error("point color component {0} outside [0, 1]")]
    BadColor(f64),
}

/// How colorize treats a point that is written more than once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorPolicy {
    /// The first observed color sticks; later writes are ignored.
    #[default]
    FirstWriteWins,
    /// Running mean over all writes, tracked via per-point write counts.
    RunningAverage,
}

/// A sparse estimate of a frame rendered from the world cloud.
///
/// `rgb` is zero and `depth` is +inf wherever `valid` is false. Valid
/// pixels carry the stored point color bit-for-bit, with the winning
/// point's camera depth.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceImage {
    width: usize,
    height: usize,
    rgb: Vec<f64>,
    valid: Mask,
    depth: Vec<f64>,
}

impl GuidanceImage {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0.0; width * height * 3],
            valid: Mask::new(width, height, false),
            depth: vec![f64::INFINITY; width * height],
        }
    }

    /// Reassembles a guidance image from raw parts (used by file readers).
    pub fn from_parts(
        width: usize,
        height: usize,
        rgb: Vec<f64>,
        valid: Mask,
        depth: Vec<f64>,
    ) -> Result<Self, WorldError> {
        if rgb.len() != width * height * 3
            || depth.len() != width * height
            || valid.width() != width
            || valid.height() != height
        {
            return Err(WorldError::BadArrays(format!(
                "guidance parts for {width}x{height}: rgb {}, depth {}, valid {}x{}",
                rgb.len(),
                depth.len(),
                valid.width(),
                valid.height()
            )));
        }
        Ok(Self { width, height, rgb, valid, depth })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[f64] {
        &self.rgb
    }

    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// The RGB plane as a frame (invalid pixels stay black).
    pub fn to_frame(&self) -> Frame {
        Frame::from_rgb(self.width, self.height, self.rgb.clone())
            .expect("guidance rgb is always in range")
    }
}

/// Z-buffer winners for one camera: per pixel, the index of the nearest
/// point, and per point, the pixel it won (if any).
struct Splat {
    winner: Vec<Option<u32>>,
    depth: Vec<f64>,
}

/// A persistent colorized point cloud.
#[derive(Debug, Clone)]
pub struct WorldCloud {
    points: Vec<Point3>,
    colors: Vec<[f64; 3]>,
    colorized: Vec<bool>,
    write_count: Vec<u32>,
}

impl WorldCloud {
    /// A fresh, fully uncolorized cloud.
    pub fn new(points: Vec<Point3>) -> Self {
        let n = points.len();
        Self {
            points,
            colors: vec![[0.0; 3]; n],
            colorized: vec![false; n],
            write_count: vec![0; n],
        }
    }

    /// Rebuilds a cloud from stored state. Colorized points get a write
    /// count of one, uncolorized points zero.
    pub fn from_parts(
        points: Vec<Point3>,
        colors: Vec<[f64; 3]>,
        colorized: Vec<bool>,
    ) -> Result<Self, WorldError> {
        if colors.len() != points.len() || colorized.len() != points.len() {
            return Err(WorldError::BadArrays(format!(
                "{} points, {} colors, {} flags",
                points.len(),
                colors.len(),
                colorized.len()
            )));
        }
        for c in &colors {
            for &v in c {
                if !(0.0..=1.0).contains(&v) {
                    return Err(WorldError::BadColor(v));
                }
            }
        }
        let write_count = colorized.iter().map(|&c| u32::from(c)).collect();
        Ok(Self { points, colors, colorized, write_count })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn colorized(&self) -> &[bool] {
        &self.colorized
    }

    pub fn write_counts(&self) -> &[u32] {
        &self.write_count
    }

    pub fn colorized_count(&self) -> usize {
        self.colorized.iter().filter(|&&c| c).count()
    }

    /// Nearest-pixel z-buffer splat of the whole cloud, colorized or not.
    ///
    /// Each point claims the single pixel its projection rounds to. The
    /// smallest depth wins; a later point displaces the current winner only
    /// when it is nearer by more than [`EPS_TIE`], so among near-equal
    /// depths the lowest point index wins regardless of evaluation order.
    fn splat(&self, cam: &Camera) -> Splat {
        let w = cam.intrinsics.width;
        let h = cam.intrinsics.height;
        let mut winner: Vec<Option<u32>> = vec![None; w * h];
        let mut depth = vec![f64::INFINITY; w * h];
        for (i, p) in self.points.iter().enumerate() {
            let Ok((u, v, d)) = project(p, cam) else { continue };
            let px = u.round();
            let py = v.round();
            if px < 0.0 || py < 0.0 || px > (w - 1) as f64 || py > (h - 1) as f64 {
                continue;
            }
            let at = py as usize * w + px as usize;
            if winner[at].is_none() || d < depth[at] - EPS_TIE {
                winner[at] = Some(i as u32);
                depth[at] = d;
            }
        }
        Splat { winner, depth }
    }

    /// Renders the guidance image seen by `cam`.
    ///
    /// Uncolorized points take part in the z-buffer (they occlude what is
    /// behind them) but never produce a valid pixel.
    pub fn render_guidance(&self, cam: &Camera) -> GuidanceImage {
        let w = cam.intrinsics.width;
        let h = cam.intrinsics.height;
        let splat = self.splat(cam);
        let mut g = GuidanceImage::empty(w, h);
        for at in 0..w * h {
            let Some(i) = splat.winner[at] else { continue };
            let i = i as usize;
            if !self.colorized[i] {
                continue;
            }
            g.rgb[at * 3..at * 3 + 3].copy_from_slice(&self.colors[i]);
            g.depth[at] = splat.depth[at];
            g.valid.set(at % w, at / w, true);
        }
        g
    }

    /// Per-point visibility under `cam`: the pixel each point wins, if any.
    pub fn point_visibility(&self, cam: &Camera) -> Vec<Option<(usize, usize)>> {
        let w = cam.intrinsics.width;
        let splat = self.splat(cam);
        let mut vis = vec![None; self.points.len()];
        for (at, &win) in splat.winner.iter().enumerate() {
            if let Some(i) = win {
                vis[i as usize] = Some((at % w, at / w));
            }
        }
        vis
    }

    /// Writes `frame` colors into every point visible from `cam`.
    ///
    /// Visibility means winning the full-cloud z-buffer for the pixel the
    /// point rounds to, with the same tie rule as rendering, so a colorize
    /// followed by a render at the same camera reproduces the frame exactly
    /// at every valid pixel. Returns how many points were written.
    pub fn colorize(
        &mut self,
        cam: &Camera,
        frame: &Frame,
        policy: ColorPolicy,
    ) -> Result<usize, WorldError> {
        let w = cam.intrinsics.width;
        let h = cam.intrinsics.height;
        if frame.width() != w || frame.height() != h {
            return Err(WorldError::SizeMismatch {
                frame_w: frame.width(),
                frame_h: frame.height(),
                cam_w: w,
                cam_h: h,
            });
        }
        let splat = self.splat(cam);
        let mut written = 0;
        for at in 0..w * h {
            let Some(i) = splat.winner[at] else { continue };
            let i = i as usize;
            let rgb = frame.pixel(at % w, at / w);
            match policy {
                ColorPolicy::FirstWriteWins => {
                    if self.colorized[i] {
                        continue;
                    }
                    self.colors[i] = rgb;
                    self.colorized[i] = true;
                    self.write_count[i] = 1;
                }
                ColorPolicy::RunningAverage => {
                    let n = self.write_count[i] as f64;
                    for (stored, new) in self.colors[i].iter_mut().zip(rgb) {
                        *stored = (*stored * n + new) / (n + 1.0);
                    }
                    self.colorized[i] = true;
                    self.write_count[i] += 1;
                }
            }
            written += 1;
        }
        Ok(written)
    }
}

/// Runs the per-step guidance loop over a camera path.
///
/// For each step `t`, renders guidance from the current world state, asks
/// `frame_fn` for the frame produced at that step (a generator, a ground
/// truth renderer, or stored footage), colorizes the world with it, and
/// moves on. Returns the guidance image each step saw.
pub fn guidance_for_sequence<F>(
    world: &mut WorldCloud,
    cams: &[Camera],
    policy: ColorPolicy,
    mut frame_fn: F,
) -> Result<Vec<GuidanceImage>, WorldError>
where
    F: FnMut(usize, &GuidanceImage) -> Frame,
{
    let mut out = Vec::with_capacity(cams.len());
    for (t, cam) in cams.iter().enumerate() {
        let g = world.render_guidance(cam);
        let frame = frame_fn(t, &g);
        world.colorize(cam, &frame, policy)?;
        out.push(g);
    }
    Ok(out)
}

/// Renders one guidance image per view from the same world state, without
/// colorizing in between. Mutually visible points therefore contribute
/// identical colors to both views.
pub fn shared_stereo_guidance(
    world: &WorldCloud,
    cam_left: &Camera,
    cam_right: &Camera,
) -> (GuidanceImage, GuidanceImage) {
    (world.render_guidance(cam_left), world.render_guidance(cam_right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Pose};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(width: usize, height: usize) -> Camera {
        Camera::new(Intrinsics::centered(50.0, width, height).unwrap(), Pose::identity())
    }

    fn colorized_cloud(points: Vec<Point3>, colors: Vec<[f64; 3]>) -> WorldCloud {
        let n = points.len();
        WorldCloud::from_parts(points, colors, vec![true; n]).unwrap()
    }

    #[test]
    fn nearer_point_wins_pixel() {
        let c = cam(9, 9);
        let cloud = colorized_cloud(
            vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 1.0)],
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        );
        let g = cloud.render_guidance(&c);
        assert_eq!(g.pixel(4, 4), [0.0, 1.0, 0.0]);
        assert_eq!(g.valid_count(), 1);
        assert_eq!(g.depth()[4 * 9 + 4], 1.0);
    }

    #[test]
    fn depth_tie_resolved_by_lowest_index_in_either_order() {
        let c = cam(9, 9);
        let near = 1.0;
        let within_tie = 1.0 + 0.5e-9;
        for (d0, d1) in [(near, within_tie), (within_tie, near)] {
            let cloud = colorized_cloud(
                vec![Vector3::new(0.0, 0.0, d0), Vector3::new(0.0, 0.0, d1)],
                vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            );
            let g = cloud.render_guidance(&c);
            assert_eq!(g.pixel(4, 4), [1.0, 0.0, 0.0], "index 0 must win ties");
        }
    }

    #[test]
    fn uncolorized_point_occludes_without_validity() {
        let c = cam(9, 9);
        let cloud = WorldCloud::from_parts(
            vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 2.0)],
            vec![[0.0; 3], [1.0, 1.0, 1.0]],
            vec![false, true],
        )
        .unwrap();
        let g = cloud.render_guidance(&c);
        assert_eq!(g.valid_count(), 0);
        assert_eq!(g.pixel(4, 4), [0.0; 3]);
        assert!(g.depth()[4 * 9 + 4].is_infinite());
    }

    #[test]
    fn uncolorized_cloud_renders_black_invalid() {
        let c = cam(9, 9);
        let cloud = WorldCloud::new(vec![Vector3::new(0.0, 0.0, 1.0)]);
        let g = cloud.render_guidance(&c);
        assert_eq!(g.valid_count(), 0);
        assert!(g.rgb().iter().all(|&v| v == 0.0));
        assert!(g.depth().iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn projection_rounds_to_nearest_pixel() {
        let k = Intrinsics::new(10.0, 10.0, 4.0, 4.0, 9, 9).unwrap();
        let c = Camera::new(k, Pose::identity());
        // u = 10 * 0.14 + 4 = 5.4 -> pixel 5; v = 10 * 0.26 + 4 = 6.6 -> 7.
        let cloud = colorized_cloud(vec![Vector3::new(0.14, 0.26, 1.0)], vec![[1.0, 1.0, 1.0]]);
        let g = cloud.render_guidance(&c);
        assert!(g.valid().get(5, 7));
        assert_eq!(g.valid_count(), 1);
    }

    #[test]
    fn out_of_bounds_and_behind_points_are_dropped() {
        let c = cam(9, 9);
        let cloud = colorized_cloud(
            vec![
                Vector3::new(10.0, 0.0, 1.0),  // u = 504.5: right of image
                Vector3::new(0.0, 0.0, -1.0),  // behind
                Vector3::new(-0.1, 0.0, 1.0),  // u = -1: rounds outside
            ],
            vec![[1.0, 1.0, 1.0]; 3],
        );
        let g = cloud.render_guidance(&c);
        assert_eq!(g.valid_count(), 0);
    }

    #[test]
    fn colorize_then_render_reproduces_frame_exactly() {
        let c = cam(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Point3> = (0..400)
            .map(|_| {
                Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(1.0..3.0))
            })
            .collect();
        let mut cloud = WorldCloud::new(points);
        let frame = Frame::from_rgb(
            16,
            16,
            (0..16 * 16 * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        cloud.colorize(&c, &frame, ColorPolicy::FirstWriteWins).unwrap();
        let g = cloud.render_guidance(&c);
        assert!(g.valid_count() > 0);
        for y in 0..16 {
            for x in 0..16 {
                if g.valid().get(x, y) {
                    assert_eq!(g.pixel(x, y), frame.pixel(x, y), "mismatch at ({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn first_write_wins_is_idempotent_and_sticky() {
        let c = cam(9, 9);
        let mut cloud = WorldCloud::new(vec![Vector3::new(0.0, 0.0, 1.0)]);
        let red = Frame::from_rgb(9, 9, [1.0, 0.0, 0.0].repeat(81)).unwrap();
        let blue = Frame::from_rgb(9, 9, [0.0, 0.0, 1.0].repeat(81)).unwrap();
        cloud.colorize(&c, &red, ColorPolicy::FirstWriteWins).unwrap();
        let snapshot = cloud.clone();
        cloud.colorize(&c, &red, ColorPolicy::FirstWriteWins).unwrap();
        assert_eq!(cloud.colors(), snapshot.colors());
        assert_eq!(cloud.write_counts(), snapshot.write_counts());
        cloud.colorize(&c, &blue, ColorPolicy::FirstWriteWins).unwrap();
        assert_eq!(cloud.colors()[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn running_average_accumulates_mean() {
        let c = cam(9, 9);
        let mut cloud = WorldCloud::new(vec![Vector3::new(0.0, 0.0, 1.0)]);
        let a = Frame::from_rgb(9, 9, [1.0, 0.0, 0.0].repeat(81)).unwrap();
        let b = Frame::from_rgb(9, 9, [0.0, 1.0, 0.0].repeat(81)).unwrap();
        cloud.colorize(&c, &a, ColorPolicy::RunningAverage).unwrap();
        cloud.colorize(&c, &b, ColorPolicy::RunningAverage).unwrap();
        assert_eq!(cloud.colors()[0], [0.5, 0.5, 0.0]);
        assert_eq!(cloud.write_counts()[0], 2);
    }

    #[test]
    fn colorize_rejects_mismatched_frame() {
        let c = cam(9, 9);
        let mut cloud = WorldCloud::new(vec![]);
        let frame = Frame::black(4, 4);
        assert!(matches!(
            cloud.colorize(&c, &frame, ColorPolicy::FirstWriteWins),
            Err(WorldError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn colorized_count_monotone_over_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let points: Vec<Point3> = (0..300)
            .map(|_| {
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..4.0))
            })
            .collect();
        let mut world = WorldCloud::new(points);
        let cams: Vec<Camera> = (0..5)
            .map(|i| {
                Camera::new(
                    Intrinsics::centered(20.0, 12, 12).unwrap(),
                    Pose::translated(Vector3::new(0.1 * i as f64, 0.0, 0.0)),
                )
            })
            .collect();
        let mut last = 0;
        let mut counts = Vec::new();
        guidance_for_sequence(&mut world, &cams, ColorPolicy::FirstWriteWins, |t, g| {
            counts.push(g.valid_count());
            let shade = (t as f64 + 1.0) / 6.0;
            Frame::from_rgb(12, 12, vec![shade; 12 * 12 * 3]).unwrap()
        })
        .unwrap();
        for _ in 0..1 {
            let c = world.colorized_count();
            assert!(c >= last);
            last = c;
        }
        // The first step always sees a black, fully invalid guidance.
        assert_eq!(counts[0], 0);
    }

    #[test]
    fn render_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let points: Vec<Point3> = (0..500)
            .map(|_| {
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(1.0..5.0))
            })
            .collect();
        let colors: Vec<[f64; 3]> =
            (0..500).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cloud = colorized_cloud(points, colors);
        let c = cam(24, 24);
        let a = cloud.render_guidance(&c);
        let b = cloud.render_guidance(&c);
        assert_eq!(a, b);
    }

    #[test]
    fn stereo_views_share_point_colors() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let points: Vec<Point3> = (0..400)
            .map(|_| {
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..5.0))
            })
            .collect();
        let colors: Vec<[f64; 3]> =
            (0..400).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cloud = colorized_cloud(points, colors);
        let left = cam(16, 16);
        let right = Camera::new(left.intrinsics, Pose::translated(Vector3::new(-0.2, 0.0, 0.0)));
        let (gl, gr) = shared_stereo_guidance(&cloud, &left, &right);
        let vl = cloud.point_visibility(&left);
        let vr = cloud.point_visibility(&right);
        let mut both = 0;
        for i in 0..cloud.len() {
            if let (Some((xl, yl)), Some((xr, yr))) = (vl[i], vr[i]) {
                assert_eq!(gl.pixel(xl, yl), gr.pixel(xr, yr));
                both += 1;
            }
        }
        assert!(both > 0, "expected mutually visible points");
    }
}
