//! Partial convolution: convolve only valid inputs, renormalize, and
//! propagate the validity mask.

use super::{conv::ConvLayer, Tensor, TensorError};

/// Checks the mask against the input and returns common dims.
fn check_shapes(
    x: &Tensor,
    mask: &Tensor,
    layer: &ConvLayer,
) -> Result<(usize, usize, usize, usize), TensorError> {
    let (n, cin, h, w) = x.dims4()?;
    if cin != layer.in_channels() {
        return Err(TensorError::ShapeMismatch(format!(
            "input has {cin} channels, layer expects {}",
            layer.in_channels()
        )));
    }
    if mask.shape() != [n, 1, h, w] {
        return Err(TensorError::ShapeMismatch(format!(
            "mask {:?} must be single-channel with the input's {n}x{h}x{w} extents",
            mask.shape()
        )));
    }
    Ok((n, cin, h, w))
}

/// Convolution over valid positions only.
///
/// Per output position, with `s` the number of valid in-bounds positions in
/// the window: if `s > 0` the masked convolution result is scaled by
/// `window/s` and the bias added, and the updated mask is 1; if `s = 0` the
/// output and updated mask are 0. `window` counts the in-bounds positions of
/// the kernel footprint, so it equals K² away from the image border; using
/// it (rather than K² everywhere) keeps a hole-free input exactly equal to
/// plain convolution under zero padding while an all-holes input still
/// yields zero output everywhere.
pub fn partial_conv2d(
    x: &Tensor,
    mask: &Tensor,
    layer: &ConvLayer,
) -> Result<(Tensor, Tensor), TensorError> {
    let (n, cin, h, w) = check_shapes(x, mask, layer)?;
    let cout = layer.out_channels();
    let k = layer.kernel();
    let (ho, wo) = layer.out_size(h, w)?;
    let pad = layer.padding as isize;
    let stride = layer.stride as isize;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut mask_out = Tensor::zeros(&[n, 1, ho, wo]);

    for ni in 0..n {
        let m_base = ni * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                // Window census shared by all output channels.
                let mut s = 0.0;
                let mut window = 0usize;
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
                        window += 1;
                        s += mask.data[m_base + iy as usize * w + ix as usize];
                    }
                }
                if s <= 0.0 {
                    continue; // output and updated mask stay 0
                }
                let scale = window as f64 / s;
                mask_out.data[ni * ho * wo + oy * wo + ox] = 1.0;
                for co in 0..cout {
                    let w_base = co * cin * k * k;
                    let mut acc = 0.0;
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
                                let at = iy as usize * w + ix as usize;
                                acc += layer.weight.data[wk_base + ky * k + kx]
                                    * x.data[x_base + at]
                                    * mask.data[m_base + at];
                            }
                        }
                    }
                    out.data[(ni * cout + co) * ho * wo + oy * wo + ox] =
                        acc * scale + layer.bias.data[co];
                }
            }
        }
    }
    Ok((out, mask_out))
}

/// Gradients of [`partial_conv2d`] with respect to input, weights, and
/// bias. The mask is a constant of the operation: no gradient flows through
/// masked-out inputs or through the updated mask.
pub fn partial_conv2d_backward(
    x: &Tensor,
    mask: &Tensor,
    layer: &ConvLayer,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let (n, cin, h, w) = check_shapes(x, mask, layer)?;
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
        let m_base = ni * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                let mut window = 0usize;
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
                        window += 1;
                        s += mask.data[m_base + iy as usize * w + ix as usize];
                    }
                }
                if s <= 0.0 {
                    continue; // this output was hard zero: nothing flows back
                }
                let scale = window as f64 / s;
                for co in 0..cout {
                    let g = grad_out.data[(ni * cout + co) * ho * wo + oy * wo + ox];
                    db.data[co] += g;
                    let gs = g * scale;
                    let w_base = co * cin * k * k;
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
                                let at = iy as usize * w + ix as usize;
                                let m = mask.data[m_base + at];
                                if m == 0.0 {
                                    continue;
                                }
                                dw.data[wk_base + ky * k + kx] += gs * x.data[x_base + at] * m;
                                dx.data[x_base + at] +=
                                    gs * layer.weight.data[wk_base + ky * k + kx] * m;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::super::conv::conv2d;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones_layer(k: usize, pad: usize) -> ConvLayer {
        ConvLayer::new(Tensor::filled(&[1, 1, k, k], 1.0), Tensor::zeros(&[1]), 1, pad).unwrap()
    }

    #[test]
    fn four_of_nine_valid_renormalizes_to_nine() {
        // Interior 3x3 window with 4 valid ones: 4 * (9/4) = 9.
        let x = Tensor::filled(&[1, 1, 5, 5], 1.0);
        let mut mask = Tensor::zeros(&[1, 1, 5, 5]);
        for (y, x_) in [(1, 1), (1, 2), (2, 1), (3, 3)] {
            mask.data_mut()[y * 5 + x_] = 1.0;
        }
        let (out, mask_out) = partial_conv2d(&x, &mask, &ones_layer(3, 1)).unwrap();
        assert_eq!(out.data()[2 * 5 + 2], 9.0);
        assert_eq!(mask_out.data()[2 * 5 + 2], 1.0);
    }

    #[test]
    fn full_mask_equals_plain_conv_including_borders() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for stride in [1usize, 2] {
            let x = Tensor::rand_uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut rng);
            let mask = Tensor::filled(&[2, 1, 8, 8], 1.0);
            let layer = ConvLayer::seeded(4, 3, 3, stride, 1, &mut rng);
            let (out, mask_out) = partial_conv2d(&x, &mask, &layer).unwrap();
            let plain = conv2d(&x, &layer).unwrap();
            let max_diff = out
                .data()
                .iter()
                .zip(plain.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-9, "stride {stride}: max diff {max_diff}");
            assert!(mask_out.data().iter().all(|&m| m == 1.0));
        }
    }

    #[test]
    fn all_holes_give_zero_output_and_zero_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x = Tensor::rand_uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let mask = Tensor::zeros(&[1, 1, 6, 6]);
        let mut layer = ConvLayer::seeded(3, 2, 3, 1, 1, &mut rng);
        layer.bias = Tensor::filled(&[3], 0.7); // bias must not leak through holes
        let (out, mask_out) = partial_conv2d(&x, &mask, &layer).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(mask_out.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn masked_inputs_receive_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = Tensor::rand_uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let mut mask = Tensor::zeros(&[1, 1, 6, 6]);
        for i in 0..36 {
            mask.data_mut()[i] = f64::from(rng.gen_bool(0.5));
        }
        let layer = ConvLayer::seeded(3, 2, 3, 1, 1, &mut rng);
        let (out, _) = partial_conv2d(&x, &mask, &layer).unwrap();
        let g = Tensor::rand_uniform(out.shape(), -1.0, 1.0, &mut rng);
        let (dx, _, _) = partial_conv2d_backward(&x, &mask, &layer, &g).unwrap();
        for ci in 0..2 {
            for at in 0..36 {
                if mask.data()[at] == 0.0 {
                    assert_eq!(dx.data()[ci * 36 + at], 0.0);
                }
            }
        }
    }

    #[test]
    fn mask_shape_mismatch_is_rejected() {
        let x = Tensor::filled(&[1, 1, 4, 4], 1.0);
        let mask = Tensor::filled(&[1, 1, 3, 4], 1.0);
        assert!(matches!(
            partial_conv2d(&x, &mask, &ones_layer(3, 1)),
            Err(TensorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn strided_mask_update_downsamples_holes() {
        // Left half valid, right half holes; stride-2 mask keeps the split.
        let x = Tensor::filled(&[1, 1, 8, 8], 1.0);
        let mut mask = Tensor::zeros(&[1, 1, 8, 8]);
        for y in 0..8 {
            for x_ in 0..3 {
                mask.data_mut()[y * 8 + x_] = 1.0;
            }
        }
        let layer = ConvLayer::new(
            Tensor::filled(&[1, 1, 3, 3], 1.0),
            Tensor::zeros(&[1]),
            2,
            1,
        )
        .unwrap();
        let (_, mask_out) = partial_conv2d(&x, &mask, &layer).unwrap();
        assert_eq!(mask_out.shape(), &[1, 1, 4, 4]);
        for y in 0..4 {
            assert_eq!(mask_out.data()[y * 4], 1.0);
            assert_eq!(mask_out.data()[y * 4 + 1], 1.0);
            assert_eq!(mask_out.data()[y * 4 + 3], 0.0);
        }
    }
}
