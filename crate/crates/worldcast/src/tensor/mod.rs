//! Deterministic dense tensor kernels.
//!
//! Everything here is plain `f64` on the heap, single-threaded, and pure:
//! the same inputs produce bit-identical outputs on every run. Backward
//! passes exist exactly for the ops the training objective needs
//! (convolution, partial convolution, modulation) and are verified against
//! finite differences in [`crate::gradcheck`].

mod conv;
mod net;
mod pconv;
mod spade;

pub use conv::{conv2d, conv2d_backward, ConvLayer};
pub use net::{
    embed_guidance, embed_labels, encode_previous, generator_forward, Discriminator,
    DiscriminatorOutput, Generator, GuidanceEmbedder, LabelEmbedder, NetworkRole, NetworkSpec,
    StageSpec, StyleEncoder,
};
pub use pconv::{partial_conv2d, partial_conv2d_backward};
pub use spade::{
    instance_norm, multi_spade, multi_spade_backward, spade_modulate, spade_modulate_backward,
    ModulationParams, ModulationSource, MultiSpadeGrads,
};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label modulation parameters are required")]
    MissingLabel,
    #[error("operation {0} has no analytic backward pass")]
    NoBackward(String),
    #[error("invalid network spec: {0}")]
    BadSpec(String),
    #[error("non-finite value in {0}")]
    NotFinite(String),
}

/// A dense row-major tensor; activations use N×C×H×W.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NotFinite("tensor data".into()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Seeded uniform fill over `[lo, hi)`, row-major order.
    pub fn rand_uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The four NCHW extents, or an error for non-4D tensors.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), TensorError> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::ShapeMismatch(format!(
                "expected a 4-d tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of elementwise products; shapes must match exactly.
    pub fn dot(&self, other: &Tensor) -> Result<f64, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch(format!(
                "dot of {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

/// Leaky ReLU used throughout the toy networks.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

/// Gradient of [`leaky_relu`] at the forward input `x`.
pub fn leaky_relu_backward(x: &Tensor, slope: f64, grad_out: &Tensor) -> Tensor {
    let data = x
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&v, &g)| if v >= 0.0 { g } else { slope * g })
        .collect();
    Tensor { shape: x.shape.clone(), data }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Nearest-neighbor spatial upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor, TensorError> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    for ni in 0..n {
        for ci in 0..c {
            let src = (ni * c + ci) * h * w;
            let dst = (ni * c + ci) * ho * wo;
            for y in 0..ho {
                for x_ in 0..wo {
                    out.data[dst + y * wo + x_] = x.data[src + (y / factor) * w + x_ / factor];
                }
            }
        }
    }
    Ok(out)
}

/// 2×2 average pooling with stride 2 (spatial dims must be even).
pub fn avg_pool2(x: &Tensor) -> Result<Tensor, TensorError> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::ShapeMismatch(format!(
            "avg_pool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    for ni in 0..n {
        for ci in 0..c {
            let src = (ni * c + ci) * h * w;
            let dst = (ni * c + ci) * ho * wo;
            for y in 0..ho {
                for x_ in 0..wo {
                    let s = x.data[src + 2 * y * w + 2 * x_]
                        + x.data[src + 2 * y * w + 2 * x_ + 1]
                        + x.data[src + (2 * y + 1) * w + 2 * x_]
                        + x.data[src + (2 * y + 1) * w + 2 * x_ + 1];
                    out.data[dst + y * wo + x_] = s * 0.25;
                }
            }
        }
    }
    Ok(out)
}

/// Concatenates tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
    let (n, _, h, w) = parts
        .first()
        .ok_or_else(|| TensorError::ShapeMismatch("concat of nothing".into()))?
        .dims4()?;
    let mut c_total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(TensorError::ShapeMismatch(format!(
                "concat_channels: {:?} vs leading {:?}",
                p.shape(),
                parts[0].shape()
            )));
        }
        c_total += pc;
    }
    let mut out = Tensor::zeros(&[n, c_total, h, w]);
    let plane = h * w;
    for ni in 0..n {
        let mut co = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = ni * pc * plane;
            let dst = (ni * c_total + co) * plane;
            out.data[dst..dst + pc * plane].copy_from_slice(&p.data[src..src + pc * plane]);
            co += pc;
        }
    }
    Ok(out)
}
