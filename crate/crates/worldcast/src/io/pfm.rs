//! Float images on disk: PFM with a two-channel extension for flow.
//!
//! Header is text ("PF" 3 channels, "Pf" 1 channel, "PF2" 2 channels),
//! then width/height, then a scale whose sign encodes byte order.
//! Samples are f32, interleaved per pixel, scanlines stored bottom-up.
//! Writes are always little-endian (scale -1.0); reads accept both
//! orders and ignore the scale magnitude.

use super::IoError;
use crate::flow::FlowField;
use crate::image::Frame;
use std::fs;
use std::path::Path;

/// A float image in memory: top-down row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, IoError> {
        if !(1..=3).contains(&channels) {
            return Err(IoError::Invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(IoError::Invalid(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            width: frame.width(),
            height: frame.height(),
            channels: 3,
            data: frame.data().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Depth map as a single-channel image; row-major input.
    pub fn from_depth(width: usize, height: usize, depth: &[f64]) -> Result<Self, IoError> {
        Self::new(width, height, 1, depth.iter().map(|&v| v as f32).collect())
    }

    pub fn from_flow(flow: &FlowField) -> Self {
        let (w, h) = (flow.width(), flow.height());
        let mut data = Vec::with_capacity(w * h * 2);
        for y in 0..h {
            for x in 0..w {
                let (du, dv) = flow.get(x, y);
                data.push(du as f32);
                data.push(dv as f32);
            }
        }
        Self { width: w, height: h, channels: 2, data }
    }

    pub fn sample(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn to_frame(&self) -> Result<Frame, IoError> {
        if self.channels != 3 {
            return Err(IoError::Invalid(format!("expected 3 channels, got {}", self.channels)));
        }
        let data = self.data.iter().map(|&v| v as f64).collect();
        Frame::from_rgb(self.width, self.height, data).map_err(|e| IoError::Invalid(e.to_string()))
    }

    pub fn to_depth(&self) -> Result<Vec<f64>, IoError> {
        if self.channels != 1 {
            return Err(IoError::Invalid(format!("expected 1 channel, got {}", self.channels)));
        }
        Ok(self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn to_flow(&self) -> Result<FlowField, IoError> {
        if self.channels != 2 {
            return Err(IoError::Invalid(format!("expected 2 channels, got {}", self.channels)));
        }
        let du = self.data.iter().step_by(2).map(|&v| v as f64).collect();
        let dv = self.data.iter().skip(1).step_by(2).map(|&v| v as f64).collect();
        FlowField::from_components(self.width, self.height, du, dv)
            .map_err(|e| IoError::Invalid(e.to_string()))
    }
}

fn type_tag(channels: usize) -> &'static str {
    match channels {
        1 => "Pf",
        2 => "PF2",
        _ => "PF",
    }
}

pub fn write_pfm(img: &PfmImage, path: &Path) -> Result<(), IoError> {
    let mut bytes = Vec::with_capacity(32 + img.data.len() * 4);
    bytes.extend_from_slice(
        format!("{}\n{} {}\n-1.0\n", type_tag(img.channels), img.width, img.height).as_bytes(),
    );
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for &v in &img.data[y * row..(y + 1) * row] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<PfmImage, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut next_line = || -> Result<String, IoError> {
        line_no += 1;
        let rest = &bytes[offset.min(bytes.len())..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| IoError::parse(line_no, "unterminated header line"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| IoError::parse(line_no, "header is not utf-8"))?
            .trim()
            .to_string();
        offset += end + 1;
        Ok(line)
    };

    let tag = next_line()?;
    let channels = match tag.as_str() {
        "Pf" => 1,
        "PF2" => 2,
        "PF" => 3,
        other => return Err(IoError::parse(1, format!("unknown image type {other:?}"))),
    };
    let dims = next_line()?;
    let mut it = dims.split_whitespace();
    let width: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| IoError::parse(2, format!("bad dimensions {dims:?}")))?;
    let height: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| IoError::parse(2, format!("bad dimensions {dims:?}")))?;
    if it.next().is_some() {
        return Err(IoError::parse(2, format!("bad dimensions {dims:?}")));
    }
    let scale: f64 = next_line()?
        .parse()
        .map_err(|_| IoError::parse(3, "scale line is not a number"))?;
    if scale == 0.0 {
        return Err(IoError::parse(3, "scale must be nonzero"));
    }
    let little_endian = scale < 0.0;

    let expected = width * height * channels * 4;
    let body = &bytes[offset..];
    if body.len() != expected {
        return Err(IoError::Format(format!(
            "expected {expected} sample bytes, found {}",
            body.len()
        )));
    }
    let row = width * channels;
    let mut data = vec![0.0f32; width * height * channels];
    for (file_row, y) in (0..height).rev().enumerate() {
        for i in 0..row {
            let at = (file_row * row + i) * 4;
            let raw: [u8; 4] = body[at..at + 4].try_into().expect("length checked above");
            data[y * row + i] =
                if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        }
    }
    PfmImage::new(width, height, channels, data)
}
