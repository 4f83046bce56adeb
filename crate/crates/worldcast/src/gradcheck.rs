//! Finite-difference verification of every analytic backward pass.
//!
//! Each case scalarizes the op with a fixed random cotangent `c`
//! (loss = sum of c ⊙ output), computes the analytic input gradient with
//! the op's backward pass, and compares coordinate by coordinate against
//! central differences with step 1e-3. The relative error metric is
//! `|a - n| / max(|a|, |n|, 1e-8)`.
//!
//! Ops with kinks (hinges, L1 terms, leaky ReLU) are sampled with an
//! explicit margin so no coordinate sits within the finite-difference
//! step of a nondifferentiable point; the margins are part of the case
//! definitions below, not of the ops themselves.

use crate::image::{Frame, Mask};
use crate::losses::{
    feature_matching, feature_matching_backward, flow_warp_backward, flow_warp_loss, hinge_d,
    hinge_d_backward, hinge_g, hinge_g_backward, world_consistency_backward,
    world_consistency_loss, FeatureExtractor,
};
use crate::tensor::{
    conv2d, conv2d_backward, leaky_relu, leaky_relu_backward, multi_spade, multi_spade_backward,
    partial_conv2d, partial_conv2d_backward, spade_modulate, spade_modulate_backward, ConvLayer,
    ModulationParams, ModulationSource, Tensor, TensorError,
};
use crate::world::GuidanceImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Central-difference step.
pub const STEP: f64 = 1e-3;
/// Default relative-error tolerance.
pub const TOLERANCE: f64 = 1e-4;
/// Tolerance for gradients that are exactly linear in the input.
pub const LINEAR_TOLERANCE: f64 = 1e-10;
/// Seeds exercised per case by [`run_suite`].
pub const SEEDS_PER_CASE: usize = 10;
/// Sampling margin keeping inputs away from kinks.
const MARGIN: f64 = 0.05;

/// Outcome of one (op, wrt) case over a set of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub op: String,
    pub wrt: String,
    pub seeds: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Every checkable (op, wrt) pair, in suite order.
pub fn available_cases() -> Vec<(&'static str, &'static str)> {
    vec![
        ("conv2d", "input"),
        ("conv2d", "weight"),
        ("conv2d", "bias"),
        ("partial_conv2d", "input"),
        ("partial_conv2d", "weight"),
        ("partial_conv2d", "bias"),
        ("spade_modulate", "input"),
        ("spade_modulate", "gamma"),
        ("spade_modulate", "beta"),
        ("multi_spade", "input"),
        ("leaky_relu", "input"),
        ("hinge_d", "real_logits"),
        ("hinge_d", "fake_logits"),
        ("hinge_g", "fake_logits"),
        ("feature_matching", "fake_features"),
        ("perceptual", "fake_image"),
        ("flow_warp", "current_frame"),
        ("world_consistency", "frame"),
    ]
}

/// Forward-only ops that deliberately have no backward pass.
const FORWARD_ONLY: &[&str] = &["sigmoid", "instance_norm", "upsample_nearest", "avg_pool2"];

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares an analytic gradient against central differences of `eval`
/// over every coordinate of the base point. Returns the max relative error.
fn compare(base: &[f64], analytic: &[f64], mut eval: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(base.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut probe = base.to_vec();
    for i in 0..base.len() {
        probe[i] = base[i] + STEP;
        let plus = eval(&probe);
        probe[i] = base[i] - STEP;
        let minus = eval(&probe);
        probe[i] = base[i];
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// Values in ±[lo, hi]: bounded away from zero with random sign.
fn sample_signed(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn cotangent(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, sample_signed(rng, n, 0.5, 1.5)).expect("finite cotangent")
}

fn conv_fixture(rng: &mut ChaCha8Rng) -> (Tensor, ConvLayer, Tensor) {
    let x = Tensor::rand_uniform(&[2, 3, 6, 6], -1.0, 1.0, rng);
    let weight = Tensor::rand_uniform(&[4, 3, 3, 3], -0.5, 0.5, rng);
    let bias = Tensor::rand_uniform(&[4], -0.5, 0.5, rng);
    let layer = ConvLayer::new(weight, bias, 1, 1).expect("valid fixture layer");
    let cot = cotangent(rng, &[2, 4, 6, 6]);
    (x, layer, cot)
}

fn check_conv(wrt: &str, seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, layer, cot) = conv_fixture(&mut rng);
    let (dx, dw, db) = conv2d_backward(&x, &layer, &cot)?;
    let eval_with = |x: &Tensor, l: &ConvLayer| {
        conv2d(x, l).unwrap().dot(&cot).unwrap()
    };
    Ok(match wrt {
        "input" => compare(x.data(), dx.data(), |v| {
            eval_with(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &layer)
        }),
        "weight" => compare(layer.weight.data(), dw.data(), |v| {
            let l = ConvLayer::new(
                Tensor::from_vec(layer.weight.shape(), v.to_vec()).unwrap(),
                layer.bias.clone(),
                layer.stride,
                layer.padding,
            )
            .unwrap();
            eval_with(&x, &l)
        }),
        "bias" => compare(layer.bias.data(), db.data(), |v| {
            let l = ConvLayer::new(
                layer.weight.clone(),
                Tensor::from_vec(layer.bias.shape(), v.to_vec()).unwrap(),
                layer.stride,
                layer.padding,
            )
            .unwrap();
            eval_with(&x, &l)
        }),
        _ => return Err(TensorError::BadSpec(format!("conv2d has no input named {wrt}"))),
    })
}

fn check_pconv(wrt: &str, seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, layer, cot) = conv_fixture(&mut rng);
    // Mixed mask with holes; shared across channels per position.
    let mask_data: Vec<f64> = (0..36).map(|_| f64::from(rng.gen_bool(0.7))).collect();
    let mask = Tensor::from_vec(&[2, 1, 6, 6], [mask_data.clone(), mask_data].concat())?;
    let (dx, dw, db) = partial_conv2d_backward(&x, &mask, &layer, &cot)?;
    let eval_with = |x: &Tensor, l: &ConvLayer| {
        partial_conv2d(x, &mask, l).unwrap().0.dot(&cot).unwrap()
    };
    Ok(match wrt {
        "input" => compare(x.data(), dx.data(), |v| {
            eval_with(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &layer)
        }),
        "weight" => compare(layer.weight.data(), dw.data(), |v| {
            let l = ConvLayer::new(
                Tensor::from_vec(layer.weight.shape(), v.to_vec()).unwrap(),
                layer.bias.clone(),
                layer.stride,
                layer.padding,
            )
            .unwrap();
            eval_with(&x, &l)
        }),
        "bias" => compare(layer.bias.data(), db.data(), |v| {
            let l = ConvLayer::new(
                layer.weight.clone(),
                Tensor::from_vec(layer.bias.shape(), v.to_vec()).unwrap(),
                layer.stride,
                layer.padding,
            )
            .unwrap();
            eval_with(&x, &l)
        }),
        _ => {
            return Err(TensorError::BadSpec(format!("partial_conv2d has no input named {wrt}")))
        }
    })
}

fn spade_fixture(
    rng: &mut ChaCha8Rng,
    source: ModulationSource,
) -> (Tensor, ModulationParams, Tensor) {
    // Small tensors keep the linear-in-beta case at full precision.
    let x = Tensor::rand_uniform(&[1, 2, 3, 3], -1.0, 1.0, rng);
    let gamma = Tensor::rand_uniform(&[2, 3, 3], -1.0, 1.0, rng);
    let beta = Tensor::rand_uniform(&[2, 3, 3], -1.0, 1.0, rng);
    let params = ModulationParams::new(gamma, beta, source).expect("valid fixture params");
    let cot = cotangent(rng, &[1, 2, 3, 3]);
    (x, params, cot)
}

fn check_spade(wrt: &str, seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, params, cot) = spade_fixture(&mut rng, ModulationSource::Label);
    let (dx, dgamma, dbeta) = spade_modulate_backward(&x, &params, &cot)?;
    Ok(match wrt {
        "input" => compare(x.data(), dx.data(), |v| {
            spade_modulate(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &params)
                .unwrap()
                .dot(&cot)
                .unwrap()
        }),
        "gamma" => compare(params.gamma.data(), dgamma.data(), |v| {
            let p = ModulationParams::new(
                Tensor::from_vec(params.gamma.shape(), v.to_vec()).unwrap(),
                params.beta.clone(),
                params.source,
            )
            .unwrap();
            spade_modulate(&x, &p).unwrap().dot(&cot).unwrap()
        }),
        "beta" => compare(params.beta.data(), dbeta.data(), |v| {
            let p = ModulationParams::new(
                params.gamma.clone(),
                Tensor::from_vec(params.beta.shape(), v.to_vec()).unwrap(),
                params.source,
            )
            .unwrap();
            spade_modulate(&x, &p).unwrap().dot(&cot).unwrap()
        }),
        _ => return Err(TensorError::BadSpec(format!("spade_modulate has no input named {wrt}"))),
    })
}

fn check_multi_spade(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, label, cot) = spade_fixture(&mut rng, ModulationSource::Label);
    let (_, flow, _) = spade_fixture(&mut rng, ModulationSource::Flow);
    let (_, guidance, _) = spade_fixture(&mut rng, ModulationSource::Guidance);
    let grads = multi_spade_backward(&x, Some(&label), Some(&flow), Some(&guidance), &cot)?;
    Ok(compare(x.data(), grads.dx.data(), |v| {
        multi_spade(
            &Tensor::from_vec(x.shape(), v.to_vec()).unwrap(),
            Some(&label),
            Some(&flow),
            Some(&guidance),
        )
        .unwrap()
        .dot(&cot)
        .unwrap()
    }))
}

fn check_leaky_relu(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Bounded away from the kink at zero.
    let data = sample_signed(&mut rng, 32, MARGIN, 1.0);
    let x = Tensor::from_vec(&[2, 4, 2, 2], data)?;
    let cot = cotangent(&mut rng, &[2, 4, 2, 2]);
    let slope = 0.2;
    let grad = leaky_relu_backward(&x, slope, &cot);
    Ok(compare(x.data(), grad.data(), |v| {
        leaky_relu(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), slope).dot(&cot).unwrap()
    }))
}

/// Logits bounded away from the hinge kinks at -1 and +1.
fn hinge_safe_logits(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(-2.0..2.0);
            let d1 = (v - 1.0).abs();
            let d2 = (v + 1.0).abs();
            if d1 < MARGIN {
                v + MARGIN.copysign(v - 1.0) * 2.0
            } else if d2 < MARGIN {
                v + MARGIN.copysign(v + 1.0) * 2.0
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("finite logits")
}

fn check_hinge_d(wrt: &str, seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = vec![
        hinge_safe_logits(&mut rng, &[1, 1, 3, 3]),
        hinge_safe_logits(&mut rng, &[1, 1, 2, 2]),
    ];
    let fake = vec![
        hinge_safe_logits(&mut rng, &[1, 1, 3, 3]),
        hinge_safe_logits(&mut rng, &[1, 1, 2, 2]),
    ];
    let (d_real, d_fake) = hinge_d_backward(&real, &fake).expect("matching scales");
    let (target, grads, other_is_fake): (&[Tensor], &[Tensor], bool) = match wrt {
        "real_logits" => (&real, &d_real, true),
        "fake_logits" => (&fake, &d_fake, false),
        _ => return Err(TensorError::BadSpec(format!("hinge_d has no input named {wrt}"))),
    };
    let mut worst = 0.0f64;
    for si in 0..target.len() {
        let base = target[si].clone();
        worst = worst.max(compare(base.data(), grads[si].data(), |v| {
            let mut probe: Vec<Tensor> = target.to_vec();
            probe[si] = Tensor::from_vec(base.shape(), v.to_vec()).unwrap();
            if other_is_fake {
                hinge_d(&probe, &fake).unwrap()
            } else {
                hinge_d(&real, &probe).unwrap()
            }
        }));
    }
    Ok(worst)
}

fn check_hinge_g(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fake = vec![
        Tensor::rand_uniform(&[1, 1, 3, 3], -2.0, 2.0, &mut rng),
        Tensor::rand_uniform(&[1, 1, 2, 2], -2.0, 2.0, &mut rng),
    ];
    let grads = hinge_g_backward(&fake).expect("nonempty scales");
    let mut worst = 0.0f64;
    for si in 0..fake.len() {
        let base = fake[si].clone();
        worst = worst.max(compare(base.data(), grads[si].data(), |v| {
            let mut probe = fake.clone();
            probe[si] = Tensor::from_vec(base.shape(), v.to_vec()).unwrap();
            hinge_g(&probe).unwrap()
        }));
    }
    Ok(worst)
}

/// Fake features offset from real by at least `MARGIN` per coordinate, so
/// the L1 kink stays out of finite-difference range.
fn check_feature_matching(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: [&[usize]; 2] = [&[1, 2, 3, 3], &[1, 4, 2, 2]];
    let real: Vec<Tensor> =
        shapes.iter().map(|s| Tensor::rand_uniform(s, -1.0, 1.0, &mut rng)).collect();
    let fake: Vec<Tensor> = real
        .iter()
        .map(|r| {
            let offsets = sample_signed(&mut rng, r.numel(), MARGIN, 0.5);
            let data = r.data().iter().zip(&offsets).map(|(v, d)| v + d).collect();
            Tensor::from_vec(r.shape(), data).unwrap()
        })
        .collect();
    let grads = feature_matching_backward(&real, &fake).expect("matching layers");
    let mut worst = 0.0f64;
    for li in 0..fake.len() {
        let base = fake[li].clone();
        worst = worst.max(compare(base.data(), grads[li].data(), |v| {
            let mut probe = fake.clone();
            probe[li] = Tensor::from_vec(base.shape(), v.to_vec()).unwrap();
            feature_matching(&real, &probe).unwrap()
        }));
    }
    Ok(worst)
}

/// Shifts each layer's biases, channel by channel, until no pre-activation
/// at the base point sits within `margin` of the leaky-ReLU kink. Small
/// input perturbations then cannot cross a kink, so the composed function
/// is smooth in the whole finite-difference neighborhood.
fn clear_kinks(ext: &mut FeatureExtractor, x: &Tensor, margin: f64) {
    let mut a = x.clone();
    for layer in ext.layers_mut() {
        let mut z = conv2d(&a, layer).expect("fixture shapes are valid");
        let (n, c, h, w) = z.dims4().expect("conv output is 4d");
        let plane = h * w;
        for ci in 0..c {
            let channel = |z: &Tensor, delta: f64| {
                (0..n)
                    .flat_map(|ni| {
                        let base = (ni * c + ci) * plane;
                        z.data()[base..base + plane].iter().map(move |v| v + delta)
                    })
                    .collect::<Vec<f64>>()
            };
            let delta = (0..=40)
                .map(|k| {
                    let mag = 0.2 * ((k + 1) / 2) as f64;
                    if k % 2 == 0 {
                        mag
                    } else {
                        -mag
                    }
                })
                .find(|&d| channel(&z, d).iter().all(|v| v.abs() >= margin))
                .expect("some shift clears the margin");
            layer.bias.data_mut()[ci] += delta;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for v in &mut z.data_mut()[base..base + plane] {
                    *v += delta;
                }
            }
        }
        a = leaky_relu(&z, 0.2);
    }
}

/// Perceptual chain with the real-side features held as data: the
/// reference features are the fake image's own features plus a margin
/// offset, which keeps every L1 coordinate away from its kink while still
/// exercising the extractor backward end to end. The extractor's biases
/// are adjusted so its internal ReLU kinks also stay out of range.
fn check_perceptual(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fake = Tensor::rand_uniform(&[1, 3, 8, 8], 0.1, 0.9, &mut rng);
    let mut ext = FeatureExtractor::seeded(seed ^ 0xfeed);
    clear_kinks(&mut ext, &fake, 0.08);
    let base_feats = ext.features(&fake)?;
    let reference: Vec<Tensor> = base_feats
        .iter()
        .map(|f| {
            let offsets = sample_signed(&mut rng, f.numel(), 0.15, 0.5);
            let data = f.data().iter().zip(&offsets).map(|(v, d)| v + d).collect();
            Tensor::from_vec(f.shape(), data).unwrap()
        })
        .collect();
    let d_feats = feature_matching_backward(&reference, &base_feats).expect("matching layers");
    let grad = ext.backward(&fake, &d_feats)?;
    Ok(compare(fake.data(), grad.data(), |v| {
        let probe = Tensor::from_vec(fake.shape(), v.to_vec()).unwrap();
        feature_matching(&reference, &ext.features(&probe).unwrap()).unwrap()
    }))
}

/// Frame pairs offset by at least `MARGIN` per channel on covered pixels.
fn margin_frame_pair(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (Frame, Frame) {
    let a: Vec<f64> = (0..w * h * 3).map(|_| rng.gen_range(0.2..0.8)).collect();
    let b: Vec<f64> = a
        .iter()
        .map(|v| {
            let mag = rng.gen_range(MARGIN..0.15);
            let up = *v + mag <= 1.0 - STEP;
            if up && rng.gen_bool(0.5) {
                v + mag
            } else {
                v - mag
            }
        })
        .collect();
    (Frame::from_rgb(w, h, a).unwrap(), Frame::from_rgb(w, h, b).unwrap())
}

fn check_flow_warp(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (current, warped) = margin_frame_pair(&mut rng, 4, 3);
    let cover_data: Vec<bool> = (0..12).map(|_| rng.gen_bool(0.8)).collect();
    let coverage = Mask::from_data(4, 3, cover_data).unwrap();
    let grad = flow_warp_backward(&current, &warped, &coverage).expect("sizes match");
    Ok(compare(current.data(), &grad, |v| {
        let probe = Frame::from_rgb(4, 3, v.to_vec()).unwrap();
        flow_warp_loss(&probe, &warped, &coverage).unwrap()
    }))
}

fn check_world_consistency(seed: u64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frame, gframe) = margin_frame_pair(&mut rng, 4, 3);
    let valid_data: Vec<bool> = (0..12).map(|_| rng.gen_bool(0.7)).collect();
    let valid = Mask::from_data(4, 3, valid_data).unwrap();
    let depth = valid.data().iter().map(|&v| if v { 2.0 } else { f64::INFINITY }).collect();
    let guidance =
        GuidanceImage::from_parts(4, 3, gframe.data().to_vec(), valid, depth).unwrap();
    let grad = world_consistency_backward(&frame, &guidance).expect("sizes match");
    Ok(compare(frame.data(), &grad, |v| {
        let probe = Frame::from_rgb(4, 3, v.to_vec()).unwrap();
        world_consistency_loss(&probe, &guidance).unwrap()
    }))
}

/// Max relative error of one case at one seed. Unknown ops and ops without
/// a backward pass are errors.
pub fn check(op: &str, wrt: &str, seed: u64) -> Result<f64, TensorError> {
    if FORWARD_ONLY.contains(&op) {
        return Err(TensorError::NoBackward(op.to_string()));
    }
    match (op, wrt) {
        ("conv2d", _) => check_conv(wrt, seed),
        ("partial_conv2d", _) => check_pconv(wrt, seed),
        ("spade_modulate", _) => check_spade(wrt, seed),
        ("multi_spade", "input") => check_multi_spade(seed),
        ("leaky_relu", "input") => check_leaky_relu(seed),
        ("hinge_d", _) => check_hinge_d(wrt, seed),
        ("hinge_g", "fake_logits") => check_hinge_g(seed),
        ("feature_matching", "fake_features") => check_feature_matching(seed),
        ("perceptual", "fake_image") => check_perceptual(seed),
        ("flow_warp", "current_frame") => check_flow_warp(seed),
        ("world_consistency", "frame") => check_world_consistency(seed),
        _ => Err(TensorError::BadSpec(format!("no gradient case for {op} wrt {wrt}"))),
    }
}

fn case_tolerance(op: &str, wrt: &str) -> f64 {
    // Modulation is linear in beta, so central differences are exact up to
    // rounding; hold that case to a far tighter bound.
    if (op, wrt) == ("spade_modulate", "beta") {
        LINEAR_TOLERANCE
    } else {
        TOLERANCE
    }
}

/// Runs one case over consecutive seeds derived from `base_seed`.
pub fn run_case(
    op: &str,
    wrt: &str,
    base_seed: u64,
    seeds: usize,
) -> Result<GradCheckReport, TensorError> {
    let mut max_rel_err = 0.0f64;
    for i in 0..seeds {
        max_rel_err = max_rel_err.max(check(op, wrt, base_seed.wrapping_add(i as u64))?);
    }
    let tolerance = case_tolerance(op, wrt);
    Ok(GradCheckReport {
        op: op.to_string(),
        wrt: wrt.to_string(),
        seeds,
        max_rel_err,
        tolerance,
        passed: max_rel_err < tolerance,
    })
}

/// Runs the whole suite: every available case over [`SEEDS_PER_CASE`] seeds.
pub fn run_suite(base_seed: u64) -> Result<Vec<GradCheckReport>, TensorError> {
    available_cases()
        .into_iter()
        .map(|(op, wrt)| run_case(op, wrt, base_seed, SEEDS_PER_CASE))
        .collect()
}
