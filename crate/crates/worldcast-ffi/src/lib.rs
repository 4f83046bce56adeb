//! C ABI over the persistent-world guidance pipeline.
//!
//! The world is an opaque handle created and freed by this library.
//! Every fallible call returns a [`WcStatus`]; results travel through
//! caller-owned buffers whose sizes are fixed by the camera passed in.
//! Pixel data is interleaved RGB, row-major, values in [0, 1].

use std::ffi::CStr;
use std::os::raw::c_char;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use worldcast::{Camera, ColorPolicy, Frame, Intrinsics, Pose, WorldCloud};

/// Outcome of every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcStatus {
    WcOk = 0,
    /// A required pointer argument was null.
    WcNullPointer = 1,
    /// An argument failed validation (counts, finiteness, ranges).
    WcInvalidArgument = 2,
    /// The camera is malformed (bad intrinsics or a non-rotation).
    WcBadCamera = 3,
    /// A file could not be read, written, or parsed.
    WcIoError = 4,
    /// A buffer size disagrees with the camera's image size.
    WcSizeMismatch = 5,
}

/// How repeated colorization writes combine.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcColorPolicy {
    /// The first write to a point is kept forever.
    WcFirstWriteWins = 0,
    /// Every write updates a running average.
    WcRunningAverage = 1,
}

/// A posed pinhole camera. `rotation` is the row-major world-to-camera
/// matrix; `translation` completes `p_cam = R * p_world + t`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WcCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// Opaque persistent world handle.
pub struct WcWorld {
    inner: WorldCloud,
}

fn camera_from_c(cam: &WcCamera) -> Result<Camera, WcStatus> {
    let intr = Intrinsics::new(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
        .map_err(|_| WcStatus::WcBadCamera)?;
    let r = &cam.rotation;
    let rot = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
    let t = Vector3::new(cam.translation[0], cam.translation[1], cam.translation[2]);
    let pose = Pose::new(rot, t).map_err(|_| WcStatus::WcBadCamera)?;
    Ok(Camera::new(intr, pose))
}

fn policy_from_c(policy: WcColorPolicy) -> ColorPolicy {
    match policy {
        WcColorPolicy::WcFirstWriteWins => ColorPolicy::FirstWriteWins,
        WcColorPolicy::WcRunningAverage => ColorPolicy::RunningAverage,
    }
}

/// Creates a world from `count` uncolorized points, `xyz` holding them as
/// consecutive x,y,z triples. On success writes the new handle to `out`.
///
/// # Safety
/// `xyz` must point to `3 * count` readable doubles (it may be null only
/// when `count` is zero) and `out` must point to writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn wc_world_new(
    xyz: *const f64,
    count: usize,
    out: *mut *mut WcWorld,
) -> WcStatus {
    if out.is_null() || (xyz.is_null() && count > 0) {
        return WcStatus::WcNullPointer;
    }
    let coords: &[f64] =
        if count == 0 { &[] } else { std::slice::from_raw_parts(xyz, count * 3) };
    if coords.iter().any(|v| !v.is_finite()) {
        return WcStatus::WcInvalidArgument;
    }
    let points = coords.chunks_exact(3).map(|p| Vector3::new(p[0], p[1], p[2])).collect();
    *out = Box::into_raw(Box::new(WcWorld { inner: WorldCloud::new(points) }));
    WcStatus::WcOk
}

/// Loads a world from an ASCII PLY file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` must point to
/// writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn wc_world_read_ply(
    path: *const c_char,
    out: *mut *mut WcWorld,
) -> WcStatus {
    if path.is_null() || out.is_null() {
        return WcStatus::WcNullPointer;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        return WcStatus::WcInvalidArgument;
    };
    match worldcast::io::read_ply(Path::new(path)) {
        Ok(cloud) => {
            *out = Box::into_raw(Box::new(WcWorld { inner: cloud }));
            WcStatus::WcOk
        }
        Err(_) => WcStatus::WcIoError,
    }
}

/// Writes the world to an ASCII PLY file.
///
/// # Safety
/// `world` must be a live handle from this library and `path` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wc_world_write_ply(
    world: *const WcWorld,
    path: *const c_char,
) -> WcStatus {
    if world.is_null() || path.is_null() {
        return WcStatus::WcNullPointer;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        return WcStatus::WcInvalidArgument;
    };
    match worldcast::io::write_ply(&(*world).inner, Path::new(path)) {
        Ok(()) => WcStatus::WcOk,
        Err(_) => WcStatus::WcIoError,
    }
}

/// Frees a world handle. Null is a no-op.
///
/// # Safety
/// `world` must be a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wc_world_free(world: *mut WcWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Number of points in the world; zero for null.
///
/// # Safety
/// `world` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn wc_world_len(world: *const WcWorld) -> usize {
    if world.is_null() {
        0
    } else {
        (*world).inner.len()
    }
}

/// Number of colorized points; zero for null.
///
/// # Safety
/// `world` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn wc_world_colorized(world: *const WcWorld) -> usize {
    if world.is_null() {
        0
    } else {
        (*world).inner.colorized_count()
    }
}

/// Writes `rgb` (width*height*3 interleaved, values in [0, 1]) into every
/// point visible from `cam`. On success stores the number of points
/// written to `written` when it is non-null.
///
/// # Safety
/// `world` must be a live handle, `cam` readable, and `rgb` must hold
/// `cam->width * cam->height * 3` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn wc_world_colorize(
    world: *mut WcWorld,
    cam: *const WcCamera,
    rgb: *const f64,
    policy: WcColorPolicy,
    written: *mut usize,
) -> WcStatus {
    if world.is_null() || cam.is_null() || rgb.is_null() {
        return WcStatus::WcNullPointer;
    }
    let camera = match camera_from_c(&*cam) {
        Ok(c) => c,
        Err(status) => return status,
    };
    let (w, h) = ((*cam).width, (*cam).height);
    let data = std::slice::from_raw_parts(rgb, w * h * 3).to_vec();
    let Ok(frame) = Frame::from_rgb(w, h, data) else {
        return WcStatus::WcInvalidArgument;
    };
    match (*world).inner.colorize(&camera, &frame, policy_from_c(policy)) {
        Ok(n) => {
            if !written.is_null() {
                *written = n;
            }
            WcStatus::WcOk
        }
        Err(_) => WcStatus::WcSizeMismatch,
    }
}

/// Renders the guidance image seen by `cam` into caller buffers: `rgb`
/// gets width*height*3 doubles, `depth` width*height doubles (infinity
/// where nothing splats), `valid` width*height bytes (1 where a colorized
/// point won the pixel). Any output pointer may be null to skip it.
///
/// # Safety
/// `world` must be a live handle, `cam` readable, and each non-null
/// output buffer must be writable at the size stated above.
#[no_mangle]
pub unsafe extern "C" fn wc_world_render_guidance(
    world: *const WcWorld,
    cam: *const WcCamera,
    rgb: *mut f64,
    depth: *mut f64,
    valid: *mut u8,
) -> WcStatus {
    if world.is_null() || cam.is_null() {
        return WcStatus::WcNullPointer;
    }
    let camera = match camera_from_c(&*cam) {
        Ok(c) => c,
        Err(status) => return status,
    };
    let g = (*world).inner.render_guidance(&camera);
    let n = camera.intrinsics.width * camera.intrinsics.height;
    if !rgb.is_null() {
        std::ptr::copy_nonoverlapping(g.rgb().as_ptr(), rgb, n * 3);
    }
    if !depth.is_null() {
        std::ptr::copy_nonoverlapping(g.depth().as_ptr(), depth, n);
    }
    if !valid.is_null() {
        for (i, &v) in g.valid().data().iter().enumerate() {
            *valid.add(i) = v as u8;
        }
    }
    WcStatus::WcOk
}

/// Static description of a status code; never null.
#[no_mangle]
pub extern "C" fn wc_status_message(status: WcStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        WcStatus::WcOk => b"ok\0",
        WcStatus::WcNullPointer => b"a required pointer was null\0",
        WcStatus::WcInvalidArgument => b"an argument failed validation\0",
        WcStatus::WcBadCamera => b"camera intrinsics or pose are malformed\0",
        WcStatus::WcIoError => b"file could not be read, written, or parsed\0",
        WcStatus::WcSizeMismatch => b"buffer size disagrees with the camera\0",
    };
    msg.as_ptr() as *const c_char
}
