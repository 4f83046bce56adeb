//! ASCII PLY point clouds with a colorization flag.
//!
//! Layout: x y z as full-precision floats, red/green/blue as 8-bit
//! values, and a `colorized` uchar marking whether the color is real or a
//! placeholder. Positions round-trip exactly; colors quantize to 1/255
//! steps on write.

use super::IoError;
use crate::world::WorldCloud;
use nalgebra::Vector3;
use std::fs;
use std::path::Path;

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes the cloud as ASCII PLY. Uncolorized points store color 0 0 0
/// with the flag cleared.
pub fn write_ply(cloud: &WorldCloud, path: &Path) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str("property uchar colorized\nend_header\n");
    for ((p, c), &flag) in cloud.points().iter().zip(cloud.colors()).zip(cloud.colorized()) {
        let (r, g, b) =
            if flag { (to_u8(c[0]), to_u8(c[1]), to_u8(c[2])) } else { (0, 0, 0) };
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            p.x,
            p.y,
            p.z,
            r,
            g,
            b,
            u8::from(flag)
        ));
    }
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Reads a cloud written by [`write_ply`]. Header lines are matched
/// strictly so foreign PLY layouts fail loudly instead of misparsing.
pub fn read_ply(path: &Path) -> Result<WorldCloud, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    fn expect<'a>(
        lines: &mut impl Iterator<Item = (usize, &'a str)>,
        want: &str,
    ) -> Result<(), IoError> {
        match lines.next() {
            Some((i, got)) if got.trim() != want => {
                Err(IoError::parse(i + 1, format!("expected '{want}', got '{got}'")))
            }
            None => Err(IoError::parse(0, format!("truncated header, expected '{want}'"))),
            _ => Ok(()),
        }
    }
    expect(&mut lines, "ply")?;
    expect(&mut lines, "format ascii 1.0")?;
    let (count_line_no, count_line) = lines
        .next()
        .ok_or_else(|| IoError::parse(0, "truncated header, expected element vertex"))?;
    let count: usize = count_line
        .trim()
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| {
            IoError::parse(count_line_no + 1, format!("bad vertex count line '{count_line}'"))
        })?;
    for want in [
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property uchar colorized",
        "end_header",
    ] {
        expect(&mut lines, want)?;
    }

    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    let mut flags = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, line) = lines
            .next()
            .ok_or_else(|| IoError::parse(0, format!("expected {count} vertices")))?;
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(IoError::parse(
                line_no,
                format!("expected 7 fields, got {}", fields.len()),
            ));
        }
        let f = |j: usize| -> Result<f64, IoError> {
            fields[j]
                .parse()
                .map_err(|_| IoError::parse(line_no, format!("bad float '{}'", fields[j])))
        };
        let u = |j: usize| -> Result<u8, IoError> {
            fields[j]
                .parse()
                .map_err(|_| IoError::parse(line_no, format!("bad byte '{}'", fields[j])))
        };
        points.push(Vector3::new(f(0)?, f(1)?, f(2)?));
        colors.push([
            f64::from(u(3)?) / 255.0,
            f64::from(u(4)?) / 255.0,
            f64::from(u(5)?) / 255.0,
        ]);
        flags.push(match u(6)? {
            0 => false,
            1 => true,
            other => {
                return Err(IoError::parse(line_no, format!("colorized flag {other} not 0/1")))
            }
        });
    }
    WorldCloud::from_parts(points, colors, flags).map_err(|e| IoError::Invalid(e.to_string()))
}
