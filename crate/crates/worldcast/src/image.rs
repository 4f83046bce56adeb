//! RGB frames and binary masks shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    SizeMismatch { expected_w: usize, expected_h: usize, got_w: usize, got_h: usize },
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("buffer length {got} does not match {expected}")]
    BadLength { expected: usize, got: usize },
}

/// An RGB image with values in [0, 1], stored interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn black(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    /// Builds a frame from interleaved RGB data, validating the range.
    pub fn from_rgb(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height * 3 {
            return Err(ImageError::BadLength { expected: width * height * 3, got: data.len() });
        }
        for &v in &data {
            if !(0.0..=1.0).contains(&v) {
                return Err(ImageError::OutOfRange(v));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar CHW copy of the pixel data (all R, then G, then B).
    pub fn to_planar(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; n * 3];
        for p in 0..n {
            for c in 0..3 {
                out[c * n + p] = self.data[p * 3 + c];
            }
        }
        out
    }

    pub fn from_planar(width: usize, height: usize, planar: &[f64]) -> Result<Self, ImageError> {
        let n = width * height;
        if planar.len() != n * 3 {
            return Err(ImageError::BadLength { expected: n * 3, got: planar.len() });
        }
        let mut data = vec![0.0; n * 3];
        for p in 0..n {
            for c in 0..3 {
                data[p * 3 + c] = planar[c * n + p];
            }
        }
        Self::from_rgb(width, height, data)
    }
}

/// A per-pixel boolean mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BadLength { expected: width * height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixelwise AND of two masks of the same size.
    pub fn and(&self, other: &Mask) -> Result<Mask, ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::SizeMismatch {
                expected_w: self.width,
                expected_h: self.height,
                got_w: other.width,
                got_h: other.height,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Ok(Mask { width: self.width, height: self.height, data })
    }
}
