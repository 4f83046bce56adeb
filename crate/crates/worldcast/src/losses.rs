//! The training objective: adversarial, matching, and consistency terms.
//!
//! Every term comes with an analytic backward pass over the quantities a
//! caller can differentiate (logits, features, frames), so the whole suite
//! is checkable against finite differences. Conventions pinned here:
//!
//! - Hinge losses average over logit elements within a scale, then over
//!   scales. The discriminator-side quantity is the one the discriminator
//!   MINIMIZES: `E[max(0, 1 - D(real))] + E[max(0, 1 + D(fake))]`; the
//!   generator side minimizes `-E[D(fake)]`.
//! - The video term scores sliding windows of K frames at temporal
//!   strides 1 and 2; a stride contributes only if a full window fits,
//!   and fewer than K frames overall is an error.
//! - L1-style terms normalize by the element count they actually cover,
//!   so coverage changes the denominator, not just the numerator.

use crate::flow::FlowField;
use crate::image::{Frame, Mask};
use crate::tensor::{
    conv2d, conv2d_backward, concat_channels, leaky_relu, leaky_relu_backward, ConvLayer, Tensor,
    TensorError,
};
use crate::world::GuidanceImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("video window of {needed} frames does not fit in a sequence of {got}")]
    WindowTooShort { needed: usize, got: usize },
    #[error("feature lists do not line up: {0}")]
    LayerMismatch(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Weights for combining the individual terms into one objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gan_image: f64,
    pub gan_video: f64,
    pub feature_matching: f64,
    pub perceptual: f64,
    pub flow_warp: f64,
    pub world_consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gan_image: 1.0,
            gan_video: 1.0,
            feature_matching: 10.0,
            perceptual: 10.0,
            flow_warp: 10.0,
            world_consistency: 10.0,
        }
    }
}

/// The individual term values plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_image: f64,
    pub gan_video: f64,
    pub feature_matching: f64,
    pub perceptual: f64,
    pub flow_warp: f64,
    pub world_consistency: f64,
    pub total: f64,
}

/// Combines term values with weights; the only place `total` is computed.
pub fn total_objective(
    gan_image: f64,
    gan_video: f64,
    feature_matching: f64,
    perceptual: f64,
    flow_warp: f64,
    world_consistency: f64,
    w: &LossWeights,
) -> LossReport {
    let total = w.gan_image * gan_image
        + w.gan_video * gan_video
        + w.feature_matching * feature_matching
        + w.perceptual * perceptual
        + w.flow_warp * flow_warp
        + w.world_consistency * world_consistency;
    LossReport {
        gan_image,
        gan_video,
        feature_matching,
        perceptual,
        flow_warp,
        world_consistency,
        total,
    }
}

fn mean(t: &Tensor) -> f64 {
    t.sum() / t.numel() as f64
}

/// L1 subgradient convention: zero at the kink (f64::signum maps 0 to 1).
fn l1_sign(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum()
    }
}

/// Discriminator-side hinge over multi-scale logits.
pub fn hinge_d(real_logits: &[Tensor], fake_logits: &[Tensor]) -> Result<f64, LossError> {
    if real_logits.len() != fake_logits.len() || real_logits.is_empty() {
        return Err(LossError::LayerMismatch(format!(
            "{} real vs {} fake logit scales",
            real_logits.len(),
            fake_logits.len()
        )));
    }
    let mut acc = 0.0;
    for (r, f) in real_logits.iter().zip(fake_logits) {
        acc += mean(&r.map(|v| (1.0 - v).max(0.0))) + mean(&f.map(|v| (1.0 + v).max(0.0)));
    }
    Ok(acc / real_logits.len() as f64)
}

/// Gradients of [`hinge_d`] with respect to both logit lists.
pub fn hinge_d_backward(
    real_logits: &[Tensor],
    fake_logits: &[Tensor],
) -> Result<(Vec<Tensor>, Vec<Tensor>), LossError> {
    if real_logits.len() != fake_logits.len() || real_logits.is_empty() {
        return Err(LossError::LayerMismatch(format!(
            "{} real vs {} fake logit scales",
            real_logits.len(),
            fake_logits.len()
        )));
    }
    let s = real_logits.len() as f64;
    let d_real = real_logits
        .iter()
        .map(|r| {
            let n = r.numel() as f64;
            r.map(|v| if 1.0 - v > 0.0 { -1.0 / (n * s) } else { 0.0 })
        })
        .collect();
    let d_fake = fake_logits
        .iter()
        .map(|f| {
            let n = f.numel() as f64;
            f.map(|v| if 1.0 + v > 0.0 { 1.0 / (n * s) } else { 0.0 })
        })
        .collect();
    Ok((d_real, d_fake))
}

/// Generator-side hinge: minimize the negated mean fake logit.
pub fn hinge_g(fake_logits: &[Tensor]) -> Result<f64, LossError> {
    if fake_logits.is_empty() {
        return Err(LossError::LayerMismatch("no logit scales".into()));
    }
    let acc: f64 = fake_logits.iter().map(|f| -mean(f)).sum();
    Ok(acc / fake_logits.len() as f64)
}

/// Gradient of [`hinge_g`] with respect to the fake logits.
pub fn hinge_g_backward(fake_logits: &[Tensor]) -> Result<Vec<Tensor>, LossError> {
    if fake_logits.is_empty() {
        return Err(LossError::LayerMismatch("no logit scales".into()));
    }
    let s = fake_logits.len() as f64;
    Ok(fake_logits
        .iter()
        .map(|f| Tensor::filled(f.shape(), -1.0 / (f.numel() as f64 * s)))
        .collect())
}

/// Builds channel-concatenated windows of `k` frames at temporal strides
/// 1 and 2. A stride is skipped when no full window fits; fewer than `k`
/// frames total is an error.
pub fn temporal_windows(frames: &[Tensor], k: usize) -> Result<Vec<Tensor>, LossError> {
    if frames.len() < k || k == 0 {
        return Err(LossError::WindowTooShort { needed: k.max(1), got: frames.len() });
    }
    let mut windows = Vec::new();
    for stride in [1usize, 2] {
        let span = (k - 1) * stride;
        if span >= frames.len() {
            continue;
        }
        for start in 0..frames.len() - span {
            let parts: Vec<&Tensor> = (0..k).map(|j| &frames[start + j * stride]).collect();
            windows.push(concat_channels(&parts)?);
        }
    }
    Ok(windows)
}

/// Per-layer L1 feature matching, each layer normalized by its own size.
pub fn feature_matching(real: &[Tensor], fake: &[Tensor]) -> Result<f64, LossError> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(LossError::LayerMismatch(format!(
            "{} real vs {} fake feature layers",
            real.len(),
            fake.len()
        )));
    }
    let mut acc = 0.0;
    for (r, f) in real.iter().zip(fake) {
        if r.shape() != f.shape() {
            return Err(LossError::LayerMismatch(format!(
                "layer shapes {:?} vs {:?}",
                r.shape(),
                f.shape()
            )));
        }
        let abs: f64 = r.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).sum();
        acc += abs / r.numel() as f64;
    }
    Ok(acc)
}

/// Gradient of [`feature_matching`] with respect to the fake features.
pub fn feature_matching_backward(
    real: &[Tensor],
    fake: &[Tensor],
) -> Result<Vec<Tensor>, LossError> {
    feature_matching(real, fake)?; // reuse validation
    Ok(real
        .iter()
        .zip(fake)
        .map(|(r, f)| {
            let n = r.numel() as f64;
            let data = r
                .data()
                .iter()
                .zip(f.data())
                .map(|(a, b)| l1_sign(b - a) / n)
                .collect();
            Tensor::from_vec(f.shape(), data).expect("grad is finite")
        })
        .collect())
}

/// Frozen random convolutional feature extractor standing in for a
/// pretrained perceptual network. Construction is deterministic in the
/// seed; it is never trained.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    layers: Vec<ConvLayer>,
}

impl FeatureExtractor {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [8usize, 16, 32, 64];
        let mut layers = Vec::new();
        let mut cin = 3;
        for w in widths {
            layers.push(ConvLayer::seeded(w, cin, 3, 2, 1, &mut rng));
            cin = w;
        }
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Gradient-check support: lets the checker shift biases so no
    /// pre-activation sits within finite-difference range of the ReLU kink.
    pub(crate) fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    /// Activations after every layer, shallowest first.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>, TensorError> {
        let mut feats = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            a = leaky_relu(&conv2d(&a, layer)?, LEAKY_SLOPE);
            feats.push(a.clone());
        }
        Ok(feats)
    }

    /// Backpropagates per-layer feature cotangents to an input gradient.
    pub fn backward(&self, x: &Tensor, d_feats: &[Tensor]) -> Result<Tensor, TensorError> {
        assert_eq!(d_feats.len(), self.layers.len(), "one cotangent per layer");
        // Re-run the forward pass, keeping each layer's input and
        // pre-activation for the chain rule.
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            inputs.push(a.clone());
            let z = conv2d(&a, layer)?;
            a = leaky_relu(&z, LEAKY_SLOPE);
            pre.push(z);
        }
        let mut grad: Option<Tensor> = None;
        for i in (0..self.layers.len()).rev() {
            let mut d_out = d_feats[i].clone();
            if let Some(g) = grad {
                for (o, gi) in d_out.data_mut().iter_mut().zip(g.data()) {
                    *o += gi;
                }
            }
            let d_pre = leaky_relu_backward(&pre[i], LEAKY_SLOPE, &d_out);
            let (dx, _, _) = conv2d_backward(&inputs[i], &self.layers[i], &d_pre)?;
            grad = Some(dx);
        }
        Ok(grad.expect("at least one layer"))
    }
}

/// Perceptual distance: per-layer normalized L1 between extractor features
/// of the two images.
pub fn perceptual_loss(
    ext: &FeatureExtractor,
    real: &Tensor,
    fake: &Tensor,
) -> Result<f64, LossError> {
    let fr = ext.features(real)?;
    let ff = ext.features(fake)?;
    feature_matching(&fr, &ff)
}

/// Gradient of [`perceptual_loss`] with respect to the fake image.
pub fn perceptual_backward(
    ext: &FeatureExtractor,
    real: &Tensor,
    fake: &Tensor,
) -> Result<Tensor, LossError> {
    let fr = ext.features(real)?;
    let ff = ext.features(fake)?;
    let d_feats = feature_matching_backward(&fr, &ff)?;
    Ok(ext.backward(fake, &d_feats)?)
}

fn check_same_size(a: &Frame, b: &Frame) -> Result<(), LossError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(LossError::SizeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Masked mean absolute difference over covered pixels: the sum of
/// per-channel absolute differences divided by 3 times the covered pixel
/// count. Zero when nothing is covered.
fn masked_l1(a: &Frame, b: &Frame, mask: &Mask) -> f64 {
    let count = mask.count();
    if count == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if !mask.get(x, y) {
                continue;
            }
            let pa = a.pixel(x, y);
            let pb = b.pixel(x, y);
            for c in 0..3 {
                acc += (pa[c] - pb[c]).abs();
            }
        }
    }
    acc / (3.0 * count as f64)
}

/// Gradient of [`masked_l1`] with respect to `a`, flattened like a frame.
fn masked_l1_backward(a: &Frame, b: &Frame, mask: &Mask) -> Vec<f64> {
    let count = mask.count();
    let mut grad = vec![0.0; a.data().len()];
    if count == 0 {
        return grad;
    }
    let norm = 3.0 * count as f64;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if !mask.get(x, y) {
                continue;
            }
            let pa = a.pixel(x, y);
            let pb = b.pixel(x, y);
            for c in 0..3 {
                grad[(y * a.width() + x) * 3 + c] = l1_sign(pa[c] - pb[c]) / norm;
            }
        }
    }
    grad
}

/// Photometric flow-warp term: L1 between the current frame and the
/// flow-warped previous frame, restricted to covered pixels.
pub fn flow_warp_loss(
    current: &Frame,
    warped_prev: &Frame,
    coverage: &Mask,
) -> Result<f64, LossError> {
    check_same_size(current, warped_prev)?;
    if coverage.width() != current.width() || coverage.height() != current.height() {
        return Err(LossError::SizeMismatch("coverage mask size".into()));
    }
    Ok(masked_l1(current, warped_prev, coverage))
}

/// Gradient of [`flow_warp_loss`] with respect to the current frame.
pub fn flow_warp_backward(
    current: &Frame,
    warped_prev: &Frame,
    coverage: &Mask,
) -> Result<Vec<f64>, LossError> {
    check_same_size(current, warped_prev)?;
    Ok(masked_l1_backward(current, warped_prev, coverage))
}

/// Convenience wrapper: warps the previous frame with `flow` and scores it
/// against the current frame.
pub fn flow_warp_loss_from_flow(
    current: &Frame,
    prev: &Frame,
    flow: &FlowField,
) -> Result<f64, LossError> {
    let (warped, coverage) =
        crate::flow::warp(prev, flow).map_err(|e| LossError::SizeMismatch(e.to_string()))?;
    flow_warp_loss(current, &warped, &coverage)
}

/// World-consistency term: L1 between the frame and the guidance image,
/// restricted to pixels where guidance is valid.
pub fn world_consistency_loss(frame: &Frame, guidance: &GuidanceImage) -> Result<f64, LossError> {
    let g = guidance.to_frame();
    check_same_size(frame, &g)?;
    Ok(masked_l1(frame, &g, guidance.valid()))
}

/// Gradient of [`world_consistency_loss`] with respect to the frame.
pub fn world_consistency_backward(
    frame: &Frame,
    guidance: &GuidanceImage,
) -> Result<Vec<f64>, LossError> {
    let g = guidance.to_frame();
    check_same_size(frame, &g)?;
    Ok(masked_l1_backward(frame, &g, guidance.valid()))
}
