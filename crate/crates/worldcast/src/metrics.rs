//! Consistency metrics: color-space deltas, round-trip and short-term
//! temporal error, and trajectory helpers.
//!
//! The long-term metric compares a frame against a re-rendered view after
//! a camera round trip, in both raw RGB (mean absolute difference scaled
//! to 8-bit units) and CIELAB (perceptually motivated). The short-term
//! metric scores consecutive frame pairs through flow warping.

use crate::flow::{warp, FlowField};
use crate::image::{Frame, Mask};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("{0} flow fields do not pair up with {1} frames")]
    FlowCount(usize, usize),
}

/// D65 sRGB-to-XYZ matrix (linear light), row major.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// D65 reference white.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.04045 / 12.92 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D {
        t * t * t
    } else {
        3.0 * D * D * (t - 4.0 / 29.0)
    }
}

/// sRGB in [0,1] to CIELAB under D65.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = [srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2])];
    let mut xyz = [0.0; 3];
    for (i, row) in SRGB_TO_XYZ.iter().enumerate() {
        xyz[i] = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIELAB back to sRGB. Inverse of [`rgb_to_lab`] for in-gamut colors.
pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [lab_f_inv(fx) * WHITE[0], lab_f_inv(fy) * WHITE[1], lab_f_inv(fz) * WHITE[2]];
    // Inverse of SRGB_TO_XYZ, computed once from the same 7-digit matrix.
    let inv = [
        [3.240454836021, -1.537138850103, -0.498531546868],
        [-0.969266389876, 1.876010928842, 0.041556082347],
        [0.055643419604, -0.204025854268, 1.057225162458],
    ];
    let mut lin = [0.0; 3];
    for (i, row) in inv.iter().enumerate() {
        lin[i] = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
    }
    [linear_to_srgb(lin[0]), linear_to_srgb(lin[1]), linear_to_srgb(lin[2])]
}

fn check_sizes(a: &Frame, b: &Frame, mask: Option<&Mask>) -> Result<(), MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::SizeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if let Some(m) = mask {
        if m.width() != a.width() || m.height() != a.height() {
            return Err(MetricsError::SizeMismatch("mask size".into()));
        }
    }
    Ok(())
}

fn masked_pixels<'a>(
    a: &'a Frame,
    mask: Option<&'a Mask>,
) -> impl Iterator<Item = (usize, usize)> + 'a {
    let (w, h) = (a.width(), a.height());
    (0..h).flat_map(move |y| (0..w).map(move |x| (x, y))).filter(move |&(x, y)| {
        mask.is_none_or(|m| m.get(x, y))
    })
}

/// Mean absolute RGB difference over (optionally masked) pixels, scaled
/// by 255 into 8-bit units. Zero when the mask selects nothing.
pub fn delta_rgb(a: &Frame, b: &Frame, mask: Option<&Mask>) -> Result<f64, MetricsError> {
    check_sizes(a, b, mask)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (x, y) in masked_pixels(a, mask) {
        let pa = a.pixel(x, y);
        let pb = b.pixel(x, y);
        for c in 0..3 {
            acc += (pa[c] - pb[c]).abs();
        }
        count += 1;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(255.0 * acc / (3.0 * count as f64))
}

/// Mean absolute CIELAB difference over (optionally masked) pixels.
pub fn delta_lab(a: &Frame, b: &Frame, mask: Option<&Mask>) -> Result<f64, MetricsError> {
    check_sizes(a, b, mask)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (x, y) in masked_pixels(a, mask) {
        let la = rgb_to_lab(a.pixel(x, y));
        let lb = rgb_to_lab(b.pixel(x, y));
        for c in 0..3 {
            acc += (la[c] - lb[c]).abs();
        }
        count += 1;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(acc / (3.0 * count as f64))
}

/// Round-trip comparison of two frames in both color spaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbConsistency {
    pub delta_rgb: f64,
    pub delta_lab: f64,
    pub pixels: usize,
}

/// Scores frame `b` (typically a re-rendered view after a camera round
/// trip) against reference `a` on the optionally masked pixels.
pub fn fb_consistency(
    a: &Frame,
    b: &Frame,
    mask: Option<&Mask>,
) -> Result<FbConsistency, MetricsError> {
    let pixels = mask.map_or(a.width() * a.height(), Mask::count);
    Ok(FbConsistency {
        delta_rgb: delta_rgb(a, b, mask)?,
        delta_lab: delta_lab(a, b, mask)?,
        pixels,
    })
}

/// Mean photometric error between consecutive frames after flow warping:
/// each pair contributes the coverage-masked L1 divided by 3 times the
/// covered pixel count, and pairs are averaged. `flows[i]` maps frame
/// `i+1` back to frame `i`.
pub fn short_term_consistency(
    frames: &[Frame],
    flows: &[FlowField],
) -> Result<f64, MetricsError> {
    if frames.len() < 2 {
        return Err(MetricsError::TooFewFrames { needed: 2, got: frames.len() });
    }
    if flows.len() != frames.len() - 1 {
        return Err(MetricsError::FlowCount(flows.len(), frames.len()));
    }
    let mut acc = 0.0;
    for (i, flow) in flows.iter().enumerate() {
        let (warped, coverage) =
            warp(&frames[i], flow).map_err(|e| MetricsError::SizeMismatch(e.to_string()))?;
        let count = coverage.count();
        if count == 0 {
            continue;
        }
        let mut pair = 0.0;
        for (x, y) in masked_pixels(&warped, Some(&coverage)) {
            let pw = warped.pixel(x, y);
            let pc = frames[i + 1].pixel(x, y);
            for c in 0..3 {
                pair += (pw[c] - pc[c]).abs();
            }
        }
        acc += pair / (3.0 * count as f64);
    }
    Ok(acc / flows.len() as f64)
}

/// Appends the reversed prefix so a trajectory retraces itself back to its
/// starting element: `[a, b, c]` becomes `[a, b, c, b, a]`.
pub fn reverse_trajectory<T: Clone>(items: &[T]) -> Vec<T> {
    let mut out = items.to_vec();
    if items.len() > 1 {
        out.extend(items[..items.len() - 1].iter().rev().cloned());
    }
    out
}

/// Everything the metrics CLI reports for one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub frames: usize,
    pub long_term: FbConsistency,
    pub short_term: f64,
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric                      value")?;
        writeln!(f, "frames            {:>15}", self.frames)?;
        writeln!(f, "long-term dRGB    {:>15.6}", self.long_term.delta_rgb)?;
        writeln!(f, "long-term dLAB    {:>15.6}", self.long_term.delta_lab)?;
        writeln!(f, "evaluated pixels  {:>15}", self.long_term.pixels)?;
        write!(f, "short-term        {:>15.6}", self.short_term)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_lab_close(actual: [f64; 3], expected: [f64; 3], tol: f64) {
        for c in 0..3 {
            assert!(
                (actual[c] - expected[c]).abs() < tol,
                "channel {c}: {} vs {}",
                actual[c],
                expected[c]
            );
        }
    }

    #[test]
    fn lab_values_of_primaries_match_reference() {
        // Frozen against an independent numpy implementation of the same
        // 7-digit D65 matrix and IEC transfer curve.
        assert_lab_close(
            rgb_to_lab([1.0, 0.0, 0.0]),
            [53.240794141307, 80.092459596411, 67.203196515853],
            1e-9,
        );
        assert_lab_close(
            rgb_to_lab([0.0, 1.0, 0.0]),
            [87.734722352798, -86.182716420535, 83.179320502698],
            1e-9,
        );
        assert_lab_close(
            rgb_to_lab([0.0, 0.0, 1.0]),
            [32.297010932851, 79.187519845122, -107.860161754148],
            1e-9,
        );
        assert_lab_close(
            rgb_to_lab([0.25, 0.5, 0.75]),
            [52.018187277843, 0.093398267959, -39.363066496673],
            1e-9,
        );
        assert_lab_close(
            rgb_to_lab([1.0, 1.0, 1.0]),
            [100.000003866667, -0.000016666666, 0.000006666666],
            1e-9,
        );
        assert_eq!(rgb_to_lab([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn lab_round_trips_a_dense_rgb_grid() {
        for r in 0..17 {
            for g in 0..17 {
                for b in 0..17 {
                    let rgb = [r as f64 / 16.0, g as f64 / 16.0, b as f64 / 16.0];
                    let back = lab_to_rgb(rgb_to_lab(rgb));
                    for c in 0..3 {
                        assert!(
                            (rgb[c] - back[c]).abs() < 1e-6,
                            "{rgb:?} -> {back:?} at channel {c}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn delta_rgb_hand_case() {
        let a = Frame::from_rgb(2, 1, vec![0.5; 6]).unwrap();
        let b = Frame::from_rgb(2, 1, vec![0.25; 6]).unwrap();
        let d = delta_rgb(&a, &b, None).unwrap();
        assert!((d - 63.75).abs() < 1e-12);
        assert_eq!(delta_rgb(&a, &a, None).unwrap(), 0.0);
    }

    #[test]
    fn masks_restrict_both_deltas() {
        let a = Frame::from_rgb(2, 1, vec![0.5, 0.5, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let b = Frame::from_rgb(2, 1, vec![0.5, 0.5, 0.5, 1.0, 1.0, 1.0]).unwrap();
        let mut m = Mask::new(2, 1, false);
        m.set(0, 0, true);
        assert_eq!(delta_rgb(&a, &b, Some(&m)).unwrap(), 0.0);
        assert_eq!(delta_lab(&a, &b, Some(&m)).unwrap(), 0.0);
        // Unmasked, the second pixel (black vs white) dominates.
        assert!(delta_rgb(&a, &b, None).unwrap() > 100.0);
    }

    #[test]
    fn empty_mask_scores_zero() {
        let a = Frame::from_rgb(2, 2, vec![1.0; 12]).unwrap();
        let b = Frame::black(2, 2);
        let none = Mask::new(2, 2, false);
        assert_eq!(delta_rgb(&a, &b, Some(&none)).unwrap(), 0.0);
        assert_eq!(fb_consistency(&a, &b, Some(&none)).unwrap().pixels, 0);
    }

    #[test]
    fn black_vs_white_lab_delta_is_a_third_of_l_range() {
        let a = Frame::black(1, 1);
        let b = Frame::from_rgb(1, 1, vec![1.0; 3]).unwrap();
        let d = delta_lab(&a, &b, None).unwrap();
        assert!((d - 100.0 / 3.0).abs() < 1e-4, "got {d}");
    }

    #[test]
    fn short_term_is_zero_for_static_scene_with_zero_flow() {
        let f = Frame::from_rgb(4, 4, vec![0.3; 48]).unwrap();
        let frames = vec![f.clone(), f.clone(), f];
        let flows = vec![FlowField::zeros(4, 4), FlowField::zeros(4, 4)];
        assert_eq!(short_term_consistency(&frames, &flows).unwrap(), 0.0);
    }

    #[test]
    fn short_term_is_zero_when_flow_matches_an_integer_shift() {
        // frame1(x) = frame0(x+1): backward flow du=1 aligns them exactly.
        let mut f0 = Frame::black(4, 1);
        for x in 0..4 {
            f0.set_pixel(x, 0, [x as f64 / 4.0; 3]);
        }
        let mut f1 = Frame::black(4, 1);
        for x in 0..3 {
            f1.set_pixel(x, 0, f0.pixel(x + 1, 0));
        }
        let mut flow = FlowField::zeros(4, 1);
        for x in 0..4 {
            flow.set(x, 0, 1.0, 0.0);
        }
        let v = short_term_consistency(&[f0, f1], &[flow]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn short_term_validates_pairing() {
        let f = Frame::black(2, 2);
        assert_eq!(
            short_term_consistency(std::slice::from_ref(&f), &[]),
            Err(MetricsError::TooFewFrames { needed: 2, got: 1 })
        );
        assert_eq!(
            short_term_consistency(&[f.clone(), f], &[]),
            Err(MetricsError::FlowCount(0, 2))
        );
    }

    #[test]
    fn reverse_trajectory_retraces_to_the_start() {
        assert_eq!(reverse_trajectory(&[1, 2, 3]), vec![1, 2, 3, 2, 1]);
        assert_eq!(reverse_trajectory(&[7]), vec![7]);
        assert_eq!(reverse_trajectory::<i32>(&[]), Vec::<i32>::new());
    }

    #[test]
    fn report_serializes_and_prints() {
        let report = ConsistencyReport {
            frames: 5,
            long_term: FbConsistency { delta_rgb: 1.25, delta_lab: 0.5, pixels: 4096 },
            short_term: 0.001,
        };
        let text = serde_json::to_string(&report).unwrap();
        let back: ConsistencyReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
        let table = report.to_string();
        assert!(table.contains("long-term dRGB"));
        assert!(table.contains("short-term"));
    }
}
