//! Spatially adaptive modulation: per-element affine maps predicted from
//! conditioning inputs, applied to normalized activations, optionally
//! chained across several conditioning sources in a fixed order.

use super::{Tensor, TensorError};

/// Which conditioning input produced a set of modulation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModulationSource {
    Label,
    Flow,
    Guidance,
}

/// A spatial affine map `y = x * gamma + beta`.
///
/// `gamma`/`beta` are either C×H×W (broadcast over the batch) or N×C×H×W
/// (one map per sample, as produced by the conditioning heads).
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub source: ModulationSource,
}

impl ModulationParams {
    pub fn new(gamma: Tensor, beta: Tensor, source: ModulationSource) -> Result<Self, TensorError> {
        if gamma.shape() != beta.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "gamma {:?} vs beta {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        Ok(Self { gamma, beta, source })
    }

    /// The no-op modulation (gamma 1, beta 0) for a C×H×W activation.
    pub fn identity(c: usize, h: usize, w: usize, source: ModulationSource) -> Self {
        Self {
            gamma: Tensor::filled(&[c, h, w], 1.0),
            beta: Tensor::zeros(&[c, h, w]),
            source,
        }
    }

    /// How `gamma` broadcasts over an N×C×H×W activation: `Ok(true)` when
    /// batch-shared (3-d), `Ok(false)` when per-sample (4-d).
    fn broadcast_over(&self, x: &Tensor) -> Result<bool, TensorError> {
        let (n, c, h, w) = x.dims4()?;
        match self.gamma.shape() {
            [pc, ph, pw] if [*pc, *ph, *pw] == [c, h, w] => Ok(true),
            [pn, pc, ph, pw] if [*pn, *pc, *ph, *pw] == [n, c, h, w] => Ok(false),
            other => Err(TensorError::ShapeMismatch(format!(
                "modulation params {other:?} do not fit activation {:?}",
                x.shape()
            ))),
        }
    }
}

/// Applies one affine modulation to a (normalized) activation.
pub fn spade_modulate(x: &Tensor, p: &ModulationParams) -> Result<Tensor, TensorError> {
    let broadcast = p.broadcast_over(x)?;
    let per = p.gamma.numel();
    let mut out = x.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        let j = if broadcast { i % per } else { i };
        *v = *v * p.gamma.data[j] + p.beta.data[j];
    }
    Ok(out)
}

/// Gradients of [`spade_modulate`]: returns (dx, dgamma, dbeta). When the
/// parameters broadcast over the batch, their gradients sum over it.
pub fn spade_modulate_backward(
    x: &Tensor,
    p: &ModulationParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    if grad_out.shape() != x.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "grad_out {:?} vs activation {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let broadcast = p.broadcast_over(x)?;
    let per = p.gamma.numel();
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(p.gamma.shape());
    let mut dbeta = Tensor::zeros(p.beta.shape());
    for i in 0..x.numel() {
        let j = if broadcast { i % per } else { i };
        let g = grad_out.data[i];
        dx.data[i] = g * p.gamma.data[j];
        dgamma.data[j] += g * x.data[i];
        dbeta.data[j] += g;
    }
    Ok((dx, dgamma, dbeta))
}

/// Chains up to three modulations in the fixed order label, flow, guidance.
/// The label parameters are always required; flow and guidance are skipped
/// when absent (first frame has no flow; an untrained guidance path may be
/// absent entirely).
pub fn multi_spade(
    x: &Tensor,
    label: Option<&ModulationParams>,
    flow: Option<&ModulationParams>,
    guidance: Option<&ModulationParams>,
) -> Result<Tensor, TensorError> {
    let label = label.ok_or(TensorError::MissingLabel)?;
    let mut y = spade_modulate(x, label)?;
    if let Some(f) = flow {
        y = spade_modulate(&y, f)?;
    }
    if let Some(g) = guidance {
        y = spade_modulate(&y, g)?;
    }
    Ok(y)
}

/// Gradients of [`multi_spade`] for every present parameter set.
#[derive(Debug)]
pub struct MultiSpadeGrads {
    pub dx: Tensor,
    pub dlabel: (Tensor, Tensor),
    pub dflow: Option<(Tensor, Tensor)>,
    pub dguidance: Option<(Tensor, Tensor)>,
}

pub fn multi_spade_backward(
    x: &Tensor,
    label: Option<&ModulationParams>,
    flow: Option<&ModulationParams>,
    guidance: Option<&ModulationParams>,
    grad_out: &Tensor,
) -> Result<MultiSpadeGrads, TensorError> {
    let label = label.ok_or(TensorError::MissingLabel)?;
    // Recompute the intermediate activations of the forward chain.
    let y1 = spade_modulate(x, label)?;
    let y2 = match flow {
        Some(f) => spade_modulate(&y1, f)?,
        None => y1.clone(),
    };

    let mut grad = grad_out.clone();
    let dguidance = match guidance {
        Some(gp) => {
            let (dy, dg, db) = spade_modulate_backward(&y2, gp, &grad)?;
            grad = dy;
            Some((dg, db))
        }
        None => None,
    };
    let dflow = match flow {
        Some(fp) => {
            let (dy, dg, db) = spade_modulate_backward(&y1, fp, &grad)?;
            grad = dy;
            Some((dg, db))
        }
        None => None,
    };
    let (dx, dgl, dbl) = spade_modulate_backward(x, label, &grad)?;
    Ok(MultiSpadeGrads { dx, dlabel: (dgl, dbl), dflow, dguidance })
}

/// Parameter-free per-channel standardization over the spatial dims:
/// for each (sample, channel) plane, subtract the mean and divide by the
/// standard deviation (population variance, epsilon 1e-5).
pub fn instance_norm(x: &Tensor) -> Result<Tensor, TensorError> {
    const EPS: f64 = 1e-5;
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let slice = &x.data[base..base + plane];
            let mean = slice.iter().sum::<f64>() / plane as f64;
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            for (o, &v) in out.data[base..base + plane].iter_mut().zip(slice) {
                *o = (v - mean) * inv;
            }
        }
    }
    Ok(out)
}
