//! Synthetic scenes with exact ground truth.
//!
//! Scenes are sets of textured parallelogram quads. From one scene the
//! module produces everything the pipeline needs with known-correct
//! values: a point cloud sampled on the surfaces, ray-cast RGB/depth/
//! semantic frames, and camera trajectories. Because the geometry is
//! closed form, tests can assert exact round trips instead of comparing
//! against tolerances picked after the fact.

use crate::geometry::{Camera, GeometryError, Intrinsics, Point3, Pose};
use crate::image::Frame;
use crate::metrics::reverse_trajectory;
use crate::tensor::{Tensor, TensorError};
use crate::world::WorldCloud;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Corner tolerance for the parallelogram check.
pub const EPS_PARALLELOGRAM: f64 = 1e-9;
/// Rays must travel at least this far before a hit counts.
const EPS_RAY: f64 = 1e-9;
/// Background semantic id; quads must use ids above it.
pub const BACKGROUND_ID: u32 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("corners are not a parallelogram: |p2 - (p1 + p3 - p0)| = {0:.3e}")]
    NotAParallelogram(f64),
    #[error("quad is degenerate: {0}")]
    DegenerateQuad(String),
    #[error("color component {0} outside [0, 1]")]
    BadColor(f64),
    #[error("semantic id 0 is reserved for the background")]
    ReservedId,
    #[error("{0}")]
    BadTrajectory(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check_color(c: [f64; 3]) -> Result<(), SynthError> {
    for v in c {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(SynthError::BadColor(v));
        }
    }
    Ok(())
}

/// Surface coloring of a quad over its (u, v) parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Material {
    Albedo { color: [f64; 3] },
    Checker { color_a: [f64; 3], color_b: [f64; 3], tiles: usize },
}

impl Material {
    fn validate(&self) -> Result<(), SynthError> {
        match *self {
            Material::Albedo { color } => check_color(color),
            Material::Checker { color_a, color_b, tiles } => {
                check_color(color_a)?;
                check_color(color_b)?;
                if tiles == 0 {
                    return Err(SynthError::DegenerateQuad("checker with zero tiles".into()));
                }
                Ok(())
            }
        }
    }

    /// Color at surface parameters (u, v) in [0, 1]^2.
    fn color_at(&self, u: f64, v: f64) -> [f64; 3] {
        match *self {
            Material::Albedo { color } => color,
            Material::Checker { color_a, color_b, tiles } => {
                let cell = |t: f64| ((t * tiles as f64) as usize).min(tiles - 1);
                if (cell(u) + cell(v)) % 2 == 0 {
                    color_a
                } else {
                    color_b
                }
            }
        }
    }
}

/// A parallelogram patch: corners in order p0, p1, p2, p3 with
/// p2 = p1 + p3 - p0, textured by a material, tagged with a semantic id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub corners: [[f64; 3]; 4],
    pub material: Material,
    pub id: u32,
}

impl Quad {
    pub fn new(corners: [[f64; 3]; 4], material: Material, id: u32) -> Result<Self, SynthError> {
        if id == BACKGROUND_ID {
            return Err(SynthError::ReservedId);
        }
        material.validate()?;
        let q = Self { corners, material, id };
        let expected = q.p(1) + q.p(3) - q.p(0);
        let gap = (q.p(2) - expected).norm();
        if gap > EPS_PARALLELOGRAM {
            return Err(SynthError::NotAParallelogram(gap));
        }
        if q.edge_u().norm() < EPS_PARALLELOGRAM || q.edge_v().norm() < EPS_PARALLELOGRAM {
            return Err(SynthError::DegenerateQuad("zero-length edge".into()));
        }
        if q.edge_u().cross(&q.edge_v()).norm() < EPS_PARALLELOGRAM {
            return Err(SynthError::DegenerateQuad("collinear edges".into()));
        }
        Ok(q)
    }

    fn p(&self, i: usize) -> Point3 {
        Vector3::from(self.corners[i])
    }

    fn edge_u(&self) -> Vector3<f64> {
        self.p(1) - self.p(0)
    }

    fn edge_v(&self) -> Vector3<f64> {
        self.p(3) - self.p(0)
    }

    /// Surface point at parameters (u, v) in [0, 1]^2.
    pub fn at(&self, u: f64, v: f64) -> Point3 {
        self.p(0) + self.edge_u() * u + self.edge_v() * v
    }

    pub fn area(&self) -> f64 {
        self.edge_u().cross(&self.edge_v()).norm()
    }
}

/// A full scene: quads plus the background color rays fall through to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub quads: Vec<Quad>,
    pub background: [f64; 3],
}

impl SceneSpec {
    pub fn new(quads: Vec<Quad>, background: [f64; 3]) -> Result<Self, SynthError> {
        check_color(background)?;
        // Re-validate quads so deserialized scenes get the same checks.
        for q in &quads {
            Quad::new(q.corners, q.material, q.id)?;
        }
        Ok(Self { quads, background })
    }

    /// One more than the largest semantic id: the one-hot channel count.
    pub fn semantic_classes(&self) -> usize {
        self.quads.iter().map(|q| q.id).max().unwrap_or(0) as usize + 1
    }

    /// Small demo scene: three fronto-parallel checkered and flat quads at
    /// staggered depths, framed for a 60 degree camera at the origin.
    pub fn demo() -> Self {
        let albedo = |color| Material::Albedo { color };
        let quads = vec![
            Quad::new(
                [[-1.8, -1.4, 4.0], [1.8, -1.4, 4.0], [1.8, 1.4, 4.0], [-1.8, 1.4, 4.0]],
                Material::Checker {
                    color_a: [0.2, 0.2, 0.2],
                    color_b: [0.6, 0.6, 0.6],
                    tiles: 8,
                },
                1,
            )
            .expect("demo backdrop is valid"),
            Quad::new(
                [[-1.1, -0.2, 2.5], [-0.1, -0.2, 2.5], [-0.1, 0.8, 2.5], [-1.1, 0.8, 2.5]],
                albedo([0.85, 0.25, 0.2]),
                2,
            )
            .expect("demo red card is valid"),
            Quad::new(
                [[0.3, -0.7, 3.0], [1.3, -0.7, 3.0], [1.3, 0.3, 3.0], [0.3, 0.3, 3.0]],
                albedo([0.2, 0.45, 0.85]),
                3,
            )
            .expect("demo blue card is valid"),
        ];
        Self { quads, background: [0.0, 0.0, 0.0] }
    }
}

/// Samples a colorless point cloud over the scene surfaces: per quad, a
/// stratified nu x nv grid with one seeded jitter per cell, where
/// nu = round(|edge_u| * sqrt(density)) and likewise nv. A unit quad at
/// density 100 yields exactly 100 points.
pub fn sample_cloud(scene: &SceneSpec, density: f64, seed: u64) -> WorldCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for quad in &scene.quads {
        let nu = (quad.edge_u().norm() * density.sqrt()).round().max(1.0) as usize;
        let nv = (quad.edge_v().norm() * density.sqrt()).round().max(1.0) as usize;
        for j in 0..nv {
            for i in 0..nu {
                let u = (i as f64 + rng.gen_range(0.0..1.0)) / nu as f64;
                let v = (j as f64 + rng.gen_range(0.0..1.0)) / nv as f64;
                points.push(quad.at(u, v));
            }
        }
    }
    WorldCloud::new(points)
}

/// Ray-cast ground truth for one camera: color, depth (camera-frame z,
/// +inf on background), and per-pixel semantic ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GtFrame {
    pub rgb: Frame,
    pub depth: Vec<f64>,
    pub semantics: Vec<u32>,
}

impl GtFrame {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }
}

/// Intersects one ray (origin `o`, direction `d`, both world frame) with a
/// quad. Returns (t, u, v) with t the ray parameter.
fn ray_quad(o: &Point3, d: &Vector3<f64>, quad: &Quad) -> Option<(f64, f64, f64)> {
    // Solve p0 + u*eu + v*ev = o + t*d as a 3x3 system in (u, v, t).
    let m = Matrix3::from_columns(&[quad.edge_u(), quad.edge_v(), -d]);
    let rhs = o - quad.p(0);
    let sol = m.lu().solve(&rhs)?;
    let (u, v, t) = (sol.x, sol.y, sol.z);
    if t <= EPS_RAY || !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return None;
    }
    Some((t, u, v))
}

/// Renders exact ground truth by casting one ray through each pixel
/// center. Frame size comes from the camera intrinsics.
pub fn render_gt(scene: &SceneSpec, cam: &Camera) -> GtFrame {
    let k = &cam.intrinsics;
    let (w, h) = (k.width, k.height);
    let inv = cam.pose.invert();
    let origin = cam.pose.center();
    let mut rgb = Frame::black(w, h);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut semantics = vec![BACKGROUND_ID; w * h];
    for py in 0..h {
        for px in 0..w {
            // Direction with unit camera-frame z, so the ray parameter t
            // equals the camera-frame depth of the hit.
            let dir_cam =
                Vector3::new((px as f64 - k.cx) / k.fx, (py as f64 - k.cy) / k.fy, 1.0);
            let dir = inv.rotation() * dir_cam;
            let mut best: Option<(f64, [f64; 3], u32)> = None;
            for quad in &scene.quads {
                if let Some((t, u, v)) = ray_quad(&origin, &dir, quad) {
                    if best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, quad.material.color_at(u, v), quad.id));
                    }
                }
            }
            let at = py * w + px;
            match best {
                Some((t, color, id)) => {
                    rgb.set_pixel(px, py, color);
                    depth[at] = t;
                    semantics[at] = id;
                }
                None => rgb.set_pixel(px, py, scene.background),
            }
        }
    }
    GtFrame { rgb, depth, semantics }
}

/// One-hot label tensor [1, classes, H, W] from a semantic id map.
pub fn one_hot_labels(
    semantics: &[u32],
    width: usize,
    height: usize,
    classes: usize,
) -> Result<Tensor, TensorError> {
    if semantics.len() != width * height {
        return Err(TensorError::ShapeMismatch(format!(
            "{}x{} labels need {} ids, got {}",
            width,
            height,
            width * height,
            semantics.len()
        )));
    }
    let mut data = vec![0.0; classes * width * height];
    for (i, &id) in semantics.iter().enumerate() {
        let class = id as usize;
        if class >= classes {
            return Err(TensorError::ShapeMismatch(format!(
                "semantic id {id} outside {classes} classes"
            )));
        }
        data[class * width * height + i] = 1.0;
    }
    Tensor::from_vec(&[1, classes, height, width], data)
}

/// Camera path descriptions, serializable for CLI input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrajectorySpec {
    /// Start at the origin looking +z, translate by `step` per frame.
    Linear { step: [f64; 3], frames: usize },
    /// Circle around `center` at `radius`, always looking at the center,
    /// sweeping `sweep_degrees` in total.
    Orbit { center: [f64; 3], radius: f64, frames: usize, sweep_degrees: f64 },
    /// Linear out, then the same cameras in reverse back to the start.
    RoundTrip { step: [f64; 3], frames: usize },
    /// Two cameras at the origin separated by `baseline` along +x.
    StereoPair { baseline: f64 },
}

/// World-to-camera rotation looking from `eye` toward `target` with +y
/// down (matching the projection convention).
fn look_at(eye: &Point3, target: &Point3) -> Result<Matrix3<f64>, SynthError> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(SynthError::BadTrajectory("eye coincides with target".into()));
    }
    let f = forward.normalize();
    let down_hint = Vector3::new(0.0, 1.0, 0.0);
    let r = down_hint.cross(&f);
    if r.norm() < 1e-9 {
        return Err(SynthError::BadTrajectory("looking straight along the vertical".into()));
    }
    let r = r.normalize();
    let d = f.cross(&r);
    Ok(Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]))
}

fn camera_at(intr: Intrinsics, rotation: Matrix3<f64>, eye: Point3) -> Camera {
    let translation = -(rotation * eye);
    let pose = Pose::new(rotation, translation).expect("constructed rotation is orthonormal");
    Camera::new(intr, pose)
}

/// Materializes a trajectory spec into posed cameras sharing `intr`.
pub fn make_trajectory(
    spec: &TrajectorySpec,
    intr: Intrinsics,
) -> Result<Vec<Camera>, SynthError> {
    match spec {
        TrajectorySpec::Linear { step, frames } => {
            if *frames == 0 {
                return Err(SynthError::BadTrajectory("zero frames".into()));
            }
            let step = Vector3::from(*step);
            Ok((0..*frames)
                .map(|i| camera_at(intr, Matrix3::identity(), step * i as f64))
                .collect())
        }
        TrajectorySpec::Orbit { center, radius, frames, sweep_degrees } => {
            if *frames == 0 {
                return Err(SynthError::BadTrajectory("zero frames".into()));
            }
            if *radius <= 0.0 {
                return Err(SynthError::BadTrajectory(format!("radius {radius} must be > 0")));
            }
            let center = Vector3::from(*center);
            let denom = (*frames - 1).max(1) as f64;
            (0..*frames)
                .map(|i| {
                    let theta = sweep_degrees.to_radians() * i as f64 / denom;
                    let eye = center
                        + Vector3::new(-radius * theta.sin(), 0.0, -radius * theta.cos());
                    Ok(camera_at(intr, look_at(&eye, &center)?, eye))
                })
                .collect()
        }
        TrajectorySpec::RoundTrip { step, frames } => {
            let out = make_trajectory(&TrajectorySpec::Linear { step: *step, frames: *frames }, intr)?;
            Ok(reverse_trajectory(&out))
        }
        TrajectorySpec::StereoPair { baseline } => {
            if *baseline <= 0.0 {
                return Err(SynthError::BadTrajectory(format!(
                    "baseline {baseline} must be > 0"
                )));
            }
            Ok(vec![
                camera_at(intr, Matrix3::identity(), Vector3::zeros()),
                camera_at(intr, Matrix3::identity(), Vector3::new(*baseline, 0.0, 0.0)),
            ])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use crate::world::ColorPolicy;

    fn unit_quad_at(z: f64, id: u32, color: [f64; 3]) -> Quad {
        Quad::new(
            [[-0.5, -0.5, z], [0.5, -0.5, z], [0.5, 0.5, z], [-0.5, 0.5, z]],
            Material::Albedo { color },
            id,
        )
        .unwrap()
    }

    #[test]
    fn quad_rejects_non_parallelograms_and_degenerates() {
        let skewed = Quad::new(
            [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.5], [0.0, 1.0, 1.0]],
            Material::Albedo { color: [0.5; 3] },
            1,
        );
        assert!(matches!(skewed, Err(SynthError::NotAParallelogram(_))));
        let flat = Quad::new(
            [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [2.0, 0.0, 1.0], [1.0, 0.0, 1.0]],
            Material::Albedo { color: [0.5; 3] },
            1,
        );
        assert!(matches!(flat, Err(SynthError::DegenerateQuad(_))));
        assert_eq!(
            Quad::new(
                [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]],
                Material::Albedo { color: [0.5; 3] },
                0,
            ),
            Err(SynthError::ReservedId)
        );
    }

    #[test]
    fn corner_wobble_within_tolerance_is_accepted() {
        let q = Quad::new(
            [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0 + 5e-10], [0.0, 1.0, 1.0]],
            Material::Albedo { color: [0.5; 3] },
            1,
        );
        assert!(q.is_ok());
    }

    #[test]
    fn unit_quad_at_density_100_gets_exactly_100_points() {
        let scene =
            SceneSpec::new(vec![unit_quad_at(2.0, 1, [0.5; 3])], [0.0; 3]).unwrap();
        let cloud = sample_cloud(&scene, 100.0, 9);
        assert_eq!(cloud.len(), 100);
        // Every sample lies on the quad plane z = 2.
        for p in cloud.points() {
            assert!((p.z - 2.0).abs() < 1e-12);
            assert!(p.x >= -0.5 && p.x <= 0.5 && p.y >= -0.5 && p.y <= 0.5);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_stratified() {
        let scene = SceneSpec::demo();
        let a = sample_cloud(&scene, 50.0, 4);
        let b = sample_cloud(&scene, 50.0, 4);
        assert_eq!(a.points(), b.points());
        let c = sample_cloud(&scene, 50.0, 5);
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn render_hits_quads_with_exact_depth_and_id() {
        let scene =
            SceneSpec::new(vec![unit_quad_at(2.0, 1, [0.3, 0.6, 0.9])], [0.1, 0.1, 0.1])
                .unwrap();
        let cam = Camera::new(Intrinsics::centered(48.0, 33, 33).unwrap(), Pose::identity());
        let gt = render_gt(&scene, &cam);
        // Center pixel (16, 16) looks straight down +z through the quad.
        let at = 16 * 33 + 16;
        assert_eq!(gt.rgb.pixel(16, 16), [0.3, 0.6, 0.9]);
        assert!((gt.depth[at] - 2.0).abs() < 1e-12);
        assert_eq!(gt.semantics[at], 1);
        // The corner ray reaches x = -16/48 * 2 = -2/3 at the quad plane,
        // outside the footprint |x| <= 0.5.
        assert_eq!(gt.rgb.pixel(0, 0), [0.1, 0.1, 0.1]);
        assert_eq!(gt.depth[0], f64::INFINITY);
        assert_eq!(gt.semantics[0], BACKGROUND_ID);
    }

    #[test]
    fn nearer_quad_occludes_farther() {
        let scene = SceneSpec::new(
            vec![unit_quad_at(3.0, 1, [1.0, 0.0, 0.0]), unit_quad_at(1.5, 2, [0.0, 1.0, 0.0])],
            [0.0; 3],
        )
        .unwrap();
        let cam = Camera::new(Intrinsics::centered(64.0, 17, 17).unwrap(), Pose::identity());
        let gt = render_gt(&scene, &cam);
        assert_eq!(gt.rgb.pixel(8, 8), [0.0, 1.0, 0.0]);
        assert_eq!(gt.semantics[8 * 17 + 8], 2);
        assert!((gt.depth[8 * 17 + 8] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn checker_alternates_along_u() {
        let q = Quad::new(
            [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]],
            Material::Checker { color_a: [0.0; 3], color_b: [1.0; 3], tiles: 4 },
            1,
        )
        .unwrap();
        assert_eq!(q.material.color_at(0.1, 0.1), [0.0; 3]);
        assert_eq!(q.material.color_at(0.3, 0.1), [1.0; 3]);
        assert_eq!(q.material.color_at(0.3, 0.3), [0.0; 3]);
        // u = 1.0 clamps into the last cell instead of indexing past it.
        assert_eq!(q.material.color_at(1.0, 0.0), [1.0; 3]);
    }

    #[test]
    fn one_hot_labels_place_single_ones() {
        let sem = vec![0u32, 1, 2, 1];
        let t = one_hot_labels(&sem, 2, 2, 3).unwrap();
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        for (i, &id) in sem.iter().enumerate() {
            for class in 0..3 {
                let v = t.data()[class * 4 + i];
                assert_eq!(v, if class == id as usize { 1.0 } else { 0.0 });
            }
        }
        assert!(one_hot_labels(&sem, 2, 2, 2).is_err());
    }

    #[test]
    fn round_trip_trajectory_returns_to_the_start() {
        let intr = Intrinsics::centered(60.0, 16, 16).unwrap();
        let spec = TrajectorySpec::RoundTrip { step: [0.1, 0.0, 0.05], frames: 4 };
        let cams = make_trajectory(&spec, intr).unwrap();
        assert_eq!(cams.len(), 7);
        assert_eq!(cams[0].pose, cams[6].pose);
        assert_eq!(cams[2].pose, cams[4].pose);
    }

    #[test]
    fn orbit_cameras_keep_the_center_on_the_principal_point() {
        let intr = Intrinsics::centered(60.0, 17, 17).unwrap();
        let center = [0.2, -0.1, 3.0];
        let spec =
            TrajectorySpec::Orbit { center, radius: 2.0, frames: 6, sweep_degrees: 240.0 };
        let cams = make_trajectory(&spec, intr).unwrap();
        assert_eq!(cams.len(), 6);
        for cam in &cams {
            let (u, v, depth) = project(&Vector3::from(center), cam).unwrap();
            assert!((u - intr.cx).abs() < 1e-9 && (v - intr.cy).abs() < 1e-9);
            assert!((depth - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stereo_pair_is_offset_by_the_baseline() {
        let intr = Intrinsics::centered(60.0, 16, 16).unwrap();
        let cams =
            make_trajectory(&TrajectorySpec::StereoPair { baseline: 0.3 }, intr).unwrap();
        assert_eq!(cams.len(), 2);
        let delta = cams[1].pose.center() - cams[0].pose.center();
        assert!((delta - Vector3::new(0.3, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn scene_spec_round_trips_through_json() {
        let scene = SceneSpec::demo();
        let text = serde_json::to_string_pretty(&scene).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn colorized_cloud_reproduces_gt_at_the_same_camera() {
        // The full loop at miniature scale: sample, render ground truth,
        // colorize, re-render guidance, compare at valid pixels.
        let scene = SceneSpec::demo();
        let cam = Camera::new(Intrinsics::centered(48.0, 32, 32).unwrap(), Pose::identity());
        let gt = render_gt(&scene, &cam);
        let mut cloud = sample_cloud(&scene, 400.0, 11);
        cloud.colorize(&cam, &gt.rgb, ColorPolicy::FirstWriteWins).unwrap();
        let g = cloud.render_guidance(&cam);
        assert!(g.valid_count() > 200, "fixture too sparse: {}", g.valid_count());
        for y in 0..32 {
            for x in 0..32 {
                if g.valid().get(x, y) {
                    assert_eq!(g.pixel(x, y), gt.rgb.pixel(x, y), "pixel ({x},{y})");
                }
            }
        }
    }
}
