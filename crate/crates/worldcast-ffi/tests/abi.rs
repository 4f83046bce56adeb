//! Exercises the C ABI from Rust: handle lifecycle, buffer contracts,
//! and the generated header.

use std::ffi::{CStr, CString};
use std::ptr;

use worldcast_ffi::{
    wc_status_message, wc_world_colorize, wc_world_colorized, wc_world_free, wc_world_len,
    wc_world_new, wc_world_read_ply, wc_world_render_guidance, wc_world_write_ply, WcCamera,
    WcColorPolicy, WcStatus, WcWorld,
};

const W: usize = 8;
const H: usize = 8;
const DEPTH: f64 = 3.0;
const FOCAL: f64 = 10.0;

fn identity_camera() -> WcCamera {
    WcCamera {
        fx: FOCAL,
        fy: FOCAL,
        cx: (W as f64 - 1.0) / 2.0,
        cy: (H as f64 - 1.0) / 2.0,
        width: W,
        height: H,
        rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        translation: [0.0; 3],
    }
}

/// One point per pixel center at constant depth, so every pixel is a
/// z-buffer winner.
fn pixel_grid_xyz(cam: &WcCamera) -> Vec<f64> {
    let mut xyz = Vec::with_capacity(W * H * 3);
    for y in 0..H {
        for x in 0..W {
            xyz.push((x as f64 - cam.cx) * DEPTH / cam.fx);
            xyz.push((y as f64 - cam.cy) * DEPTH / cam.fy);
            xyz.push(DEPTH);
        }
    }
    xyz
}

fn test_frame() -> Vec<f64> {
    (0..W * H * 3).map(|i| (i % 97) as f64 / 96.0).collect()
}

fn make_world(xyz: &[f64]) -> *mut WcWorld {
    let mut world = ptr::null_mut();
    let status = unsafe { wc_world_new(xyz.as_ptr(), xyz.len() / 3, &mut world) };
    assert_eq!(status, WcStatus::WcOk);
    assert!(!world.is_null());
    world
}

#[test]
fn colorize_then_render_reproduces_frame() {
    let cam = identity_camera();
    let world = make_world(&pixel_grid_xyz(&cam));
    let frame = test_frame();

    let mut written = 0usize;
    let status = unsafe {
        wc_world_colorize(
            world,
            &cam,
            frame.as_ptr(),
            WcColorPolicy::WcFirstWriteWins,
            &mut written,
        )
    };
    assert_eq!(status, WcStatus::WcOk);
    assert_eq!(written, W * H);
    assert_eq!(unsafe { wc_world_colorized(world) }, W * H);

    let mut rgb = vec![0.0f64; W * H * 3];
    let mut depth = vec![0.0f64; W * H];
    let mut valid = vec![0u8; W * H];
    let status = unsafe {
        wc_world_render_guidance(
            world,
            &cam,
            rgb.as_mut_ptr(),
            depth.as_mut_ptr(),
            valid.as_mut_ptr(),
        )
    };
    assert_eq!(status, WcStatus::WcOk);
    assert!(valid.iter().all(|&v| v == 1));
    assert_eq!(rgb, frame);
    assert!(depth.iter().all(|&d| (d - DEPTH).abs() < 1e-12));

    unsafe { wc_world_free(world) };
}

#[test]
fn empty_world_renders_all_invalid() {
    let world = make_world(&[]);
    assert_eq!(unsafe { wc_world_len(world) }, 0);

    let cam = identity_camera();
    let mut rgb = vec![1.0f64; W * H * 3];
    let mut valid = vec![1u8; W * H];
    let status = unsafe {
        wc_world_render_guidance(world, &cam, rgb.as_mut_ptr(), ptr::null_mut(), valid.as_mut_ptr())
    };
    assert_eq!(status, WcStatus::WcOk);
    assert!(rgb.iter().all(|&v| v == 0.0));
    assert!(valid.iter().all(|&v| v == 0));

    unsafe { wc_world_free(world) };
}

#[test]
fn null_arguments_are_rejected() {
    let cam = identity_camera();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(wc_world_new(ptr::null(), 3, &mut out), WcStatus::WcNullPointer);
        assert_eq!(wc_world_new([0.0; 3].as_ptr(), 1, ptr::null_mut()), WcStatus::WcNullPointer);
        assert_eq!(
            wc_world_colorize(
                ptr::null_mut(),
                &cam,
                [0.0].as_ptr(),
                WcColorPolicy::WcFirstWriteWins,
                ptr::null_mut()
            ),
            WcStatus::WcNullPointer
        );
        assert_eq!(
            wc_world_render_guidance(
                ptr::null(),
                &cam,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut()
            ),
            WcStatus::WcNullPointer
        );
        assert_eq!(wc_world_len(ptr::null()), 0);
        assert_eq!(wc_world_colorized(ptr::null()), 0);
        wc_world_free(ptr::null_mut());
    }
}

#[test]
fn invalid_inputs_map_to_distinct_statuses() {
    let world = make_world(&pixel_grid_xyz(&identity_camera()));

    let mut bad_cam = identity_camera();
    bad_cam.rotation = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let frame = test_frame();
    let status = unsafe {
        wc_world_colorize(
            world,
            &bad_cam,
            frame.as_ptr(),
            WcColorPolicy::WcFirstWriteWins,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, WcStatus::WcBadCamera);

    let out_of_range = vec![2.0f64; W * H * 3];
    let status = unsafe {
        wc_world_colorize(
            world,
            &identity_camera(),
            out_of_range.as_ptr(),
            WcColorPolicy::WcFirstWriteWins,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, WcStatus::WcInvalidArgument);

    let mut out = ptr::null_mut();
    let status =
        unsafe { wc_world_new([f64::NAN, 0.0, 0.0].as_ptr(), 1, &mut out) };
    assert_eq!(status, WcStatus::WcInvalidArgument);

    let missing = CString::new("/nonexistent/cloud.ply").unwrap();
    let status = unsafe { wc_world_read_ply(missing.as_ptr(), &mut out) };
    assert_eq!(status, WcStatus::WcIoError);

    unsafe { wc_world_free(world) };
}

#[test]
fn ply_round_trip_preserves_colorized_state() {
    let cam = identity_camera();
    let world = make_world(&pixel_grid_xyz(&cam));
    let frame = test_frame();
    unsafe {
        wc_world_colorize(world, &cam, frame.as_ptr(), WcColorPolicy::WcFirstWriteWins, ptr::null_mut())
    };

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("cloud.ply").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { wc_world_write_ply(world, path.as_ptr()) }, WcStatus::WcOk);

    let mut reloaded = ptr::null_mut();
    assert_eq!(unsafe { wc_world_read_ply(path.as_ptr(), &mut reloaded) }, WcStatus::WcOk);
    assert_eq!(unsafe { wc_world_len(reloaded) }, W * H);
    assert_eq!(unsafe { wc_world_colorized(reloaded) }, W * H);

    unsafe {
        wc_world_free(world);
        wc_world_free(reloaded);
    }
}

#[test]
fn status_messages_cover_every_code() {
    for status in [
        WcStatus::WcOk,
        WcStatus::WcNullPointer,
        WcStatus::WcInvalidArgument,
        WcStatus::WcBadCamera,
        WcStatus::WcIoError,
        WcStatus::WcSizeMismatch,
    ] {
        let msg = wc_status_message(status);
        assert!(!msg.is_null());
        assert!(!unsafe { CStr::from_ptr(msg) }.to_str().unwrap().is_empty());
    }
}

#[test]
fn generated_header_exports_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/worldcast.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in [
        "WORLDCAST_H",
        "WcStatus",
        "WcCamera",
        "wc_world_new",
        "wc_world_render_guidance",
        "wc_status_message",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
