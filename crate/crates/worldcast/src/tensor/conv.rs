//! Plain 2D convolution (cross-correlation) with zero padding.

use super::{Tensor, TensorError};
use rand::Rng;

/// Weights, bias, and geometry of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub fn new(
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        let (cout, _cin, kh, kw) = weight.dims4()?;
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::ShapeMismatch(format!(
                "kernel must be square with odd size, got {kh}x{kw}"
            )));
        }
        if bias.shape() != [cout] {
            return Err(TensorError::ShapeMismatch(format!(
                "bias shape {:?} does not match {cout} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(TensorError::ShapeMismatch("stride must be at least 1".into()));
        }
        Ok(Self { weight, bias, stride, padding })
    }

    /// Seeded layer: weights uniform in ±1/√fan_in, bias zero.
    pub fn seeded<R: Rng>(
        cout: usize,
        cin: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let weight = Tensor::rand_uniform(&[cout, cin, k, k], -bound, bound, rng);
        let bias = Tensor::zeros(&[cout]);
        Self::new(weight, bias, stride, padding).expect("seeded layer dimensions are valid")
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Output spatial size for an input of the given size.
    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        let k = self.kernel();
        let span_h = h + 2 * self.padding;
        let span_w = w + 2 * self.padding;
        if span_h < k || span_w < k {
            return Err(TensorError::ShapeMismatch(format!(
                "input {h}x{w} (pad {}) smaller than kernel {k}",
                self.padding
            )));
        }
        Ok(((span_h - k) / self.stride + 1, (span_w - k) / self.stride + 1))
    }
}

/// Standard strided cross-correlation with zero padding.
pub fn conv2d(x: &Tensor, layer: &ConvLayer) -> Result<Tensor, TensorError> {
    let (n, cin, h, w) = x.dims4()?;
    if cin != layer.in_channels() {
        return Err(TensorError::ShapeMismatch(format!(
            "input has {cin} channels, layer expects {}",
            layer.in_channels()
        )));
    }
    let cout = layer.out_channels();
    let k = layer.kernel();
    let (ho, wo) = layer.out_size(h, w)?;
    let pad = layer.padding as isize;
    let stride = layer.stride as isize;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);

    for ni in 0..n {
        for co in 0..cout {
            let w_base = co * cin * k * k;
            let o_base = (ni * cout + co) * ho * wo;
            let b = layer.bias.data[co];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b;
                    for ci in 0..cin {
                        let x_base = (ni * cin + ci) * h * w;
                        let wk_base = w_base + ci * k * k;
                        for ky in 0..k {
                            let iy = oy as isize * stride - pad + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize * stride - pad + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += layer.weight.data[wk_base + ky * k + kx]
                                    * x.data[x_base + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out.data[o_base + oy * wo + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weights, and bias, given
/// the upstream gradient at the output.
pub fn conv2d_backward(
    x: &Tensor,
    layer: &ConvLayer,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let (n, cin, h, w) = x.dims4()?;
    let cout = layer.out_channels();
    let k = layer.kernel();
    let (ho, wo) = layer.out_size(h, w)?;
    if grad_out.shape() != [n, cout, ho, wo] {
        return Err(TensorError::ShapeMismatch(format!(
            "grad_out {:?} does not match output shape {:?}",
            grad_out.shape(),
            [n, cout, ho, wo]
        )));
    }
    let pad = layer.padding as isize;
    let stride = layer.stride as isize;
    let mut dx = Tensor::zeros(&[n, cin, h, w]);
    let mut dw = Tensor::zeros(layer.weight.shape());
    let mut db = Tensor::zeros(&[cout]);

    for ni in 0..n {
        for co in 0..cout {
            let w_base = co * cin * k * k;
            let o_base = (ni * cout + co) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = grad_out.data[o_base + oy * wo + ox];
                    db.data[co] += g;
                    for ci in 0..cin {
                        let x_base = (ni * cin + ci) * h * w;
                        let wk_base = w_base + ci * k * k;
                        for ky in 0..k {
                            let iy = oy as isize * stride - pad + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize * stride - pad + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = x_base + iy as usize * w + ix as usize;
                                dw.data[wk_base + ky * k + kx] += g * x.data[xi];
                                dx.data[xi] += g * layer.weight.data[wk_base + ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}
