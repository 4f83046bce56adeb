//! Backward optical flow: warping, coverage, and geometric motion fields.
//!
//! Flow is stored target-to-source: for a pixel (x, y) in the current
//! frame, the corresponding sample in the previous frame sits at
//! (x + du, y + dv). Warping therefore pulls colors from the previous
//! frame into the current frame's grid, which is the direction the
//! temporal losses need.

use crate::geometry::{backproject, project, Camera};
use crate::image::{Frame, Mask};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("flow components must be finite")]
    NotFinite,
}

/// Dense per-pixel backward flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    du: Vec<f64>,
    dv: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, du: vec![0.0; width * height], dv: vec![0.0; width * height] }
    }

    pub fn from_components(
        width: usize,
        height: usize,
        du: Vec<f64>,
        dv: Vec<f64>,
    ) -> Result<Self, FlowError> {
        if du.len() != width * height || dv.len() != width * height {
            return Err(FlowError::SizeMismatch(format!(
                "{}x{} flow needs {} entries per component, got {} and {}",
                width,
                height,
                width * height,
                du.len(),
                dv.len()
            )));
        }
        if du.iter().chain(&dv).any(|v| !v.is_finite()) {
            return Err(FlowError::NotFinite);
        }
        Ok(Self { width, height, du, dv })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn du(&self) -> &[f64] {
        &self.du
    }

    pub fn dv(&self) -> &[f64] {
        &self.dv
    }

    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.du[i], self.dv[i])
    }

    pub fn set(&mut self, x: usize, y: usize, du: f64, dv: f64) {
        let i = y * self.width + x;
        self.du[i] = du;
        self.dv[i] = dv;
    }

    /// Largest absolute displacement component, useful as a quick
    /// "is this field nonzero" witness.
    pub fn max_abs(&self) -> f64 {
        self.du.iter().chain(&self.dv).fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Bilinear sample of `frame` at continuous coordinates, with edge clamp.
/// Assumes the caller already established that some neighbor is in bounds.
fn sample_bilinear(frame: &Frame, sx: f64, sy: f64) -> [f64; 3] {
    let w = frame.width() as isize;
    let h = frame.height() as isize;
    let x0 = sx.floor() as isize;
    let y0 = sy.floor() as isize;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let p = |x: isize, y: isize| frame.pixel(clamp(x, w), clamp(y, h));
    let (p00, p10, p01, p11) = (p(x0, y0), p(x0 + 1, y0), p(x0, y0 + 1), p(x0 + 1, y0 + 1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Warps the previous frame into the current frame's grid.
///
/// Returns the warped frame and a coverage mask. A pixel is uncovered
/// exactly when its sample position has no in-bounds bilinear neighbor
/// (both floor and ceil fall outside on some axis); covered samples near
/// the border are edge-clamped. Uncovered pixels are black.
pub fn warp(prev: &Frame, flow: &FlowField) -> Result<(Frame, Mask), FlowError> {
    if prev.width() != flow.width || prev.height() != flow.height {
        return Err(FlowError::SizeMismatch(format!(
            "frame {}x{} vs flow {}x{}",
            prev.width(),
            prev.height(),
            flow.width,
            flow.height
        )));
    }
    let (w, h) = (flow.width, flow.height);
    let mut out = Frame::black(w, h);
    let mut coverage = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = flow.get(x, y);
            let sx = x as f64 + du;
            let sy = y as f64 + dv;
            let has_neighbor =
                sx >= -1.0 && sx < w as f64 && sy >= -1.0 && sy < h as f64;
            if !has_neighbor {
                continue;
            }
            out.set_pixel(x, y, sample_bilinear(prev, sx, sy));
            coverage.set(x, y, true);
        }
    }
    Ok((out, coverage))
}

/// Geometric motion field between two cameras from the current frame's
/// depth map: each pixel is lifted to a world point and reprojected into
/// the previous camera.
///
/// The validity mask is false where depth is non-finite or non-positive,
/// or where the world point falls behind the previous camera. Invalid
/// pixels carry zero flow. Unlike photometric flow, this field is fully
/// determined by geometry, so it stays nonzero across textureless
/// surfaces where brightness constancy says nothing.
pub fn motion_field(
    depth: &[f64],
    width: usize,
    height: usize,
    cam_now: &Camera,
    cam_prev: &Camera,
) -> Result<(FlowField, Mask), FlowError> {
    if depth.len() != width * height {
        return Err(FlowError::SizeMismatch(format!(
            "{}x{} motion field needs {} depths, got {}",
            width,
            height,
            width * height,
            depth.len()
        )));
    }
    let mut field = FlowField::zeros(width, height);
    let mut valid = Mask::new(width, height, false);
    for y in 0..height {
        for x in 0..width {
            let d = depth[y * width + x];
            if !d.is_finite() || d <= 0.0 {
                continue;
            }
            let p = match backproject(x as f64, y as f64, d, cam_now) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let Ok((u_prev, v_prev, _)) = project(&p, cam_prev) else {
                continue;
            };
            field.set(x, y, u_prev - x as f64, v_prev - y as f64);
            valid.set(x, y, true);
        }
    }
    Ok((field, valid))
}
