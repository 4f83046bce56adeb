//! The toy network family: specs, builders, and forward passes.
//!
//! Scale is configurable through [`NetworkSpec`]; the defaults target
//! 64×64 frames with four generator stages. There is no training loop, so
//! construction only needs to be deterministic: every net derives its
//! weights from the spec's seed (uniform ±1/√fan_in, zero biases).

use super::conv::{conv2d, ConvLayer};
use super::pconv::partial_conv2d;
use super::spade::{instance_norm, multi_spade, ModulationParams, ModulationSource};
use super::{avg_pool2, leaky_relu, sigmoid, upsample_nearest, Tensor, TensorError};
use crate::image::Frame;
use crate::world::GuidanceImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkRole {
    LabelEmbed,
    FlowEmbed,
    ImageEncoder,
    SegEncoder,
    Generator,
    ImageDiscriminator,
    VideoDiscriminator,
}

/// One stage of a network: its channel width and how it changes resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    #[serde(rename = "scale")]
    pub scale: StageScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageScale {
    Up2,
    Down2,
    Keep,
}

/// Complete description of one toy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: NetworkRole,
    pub stages: Vec<StageSpec>,
    /// Frame count K consumed by the video discriminator.
    pub video_window: usize,
    pub in_channels: usize,
    /// Channel width of embedding taps consumed by the generator's heads.
    pub embed_dim: usize,
    /// Length of the style vector.
    pub style_dim: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub seed: u64,
}

impl NetworkSpec {
    /// Desk-scale default for the given role. `in_channels` is the label
    /// channel count for label-consuming roles and ignored otherwise.
    pub fn toy(role: NetworkRole, label_channels: usize, seed: u64) -> Self {
        let down = |channels| StageSpec { channels, scale: StageScale::Down2 };
        let up = |channels| StageSpec { channels, scale: StageScale::Up2 };
        let video_window = 3;
        let (stages, in_channels) = match role {
            NetworkRole::Generator => (vec![up(64), up(32), up(16), up(8)], 0),
            NetworkRole::LabelEmbed => (vec![down(16); 4], label_channels),
            NetworkRole::FlowEmbed => (vec![down(16); 4], 3),
            NetworkRole::ImageEncoder => (vec![down(8), down(16), down(32), down(64)], 3),
            NetworkRole::SegEncoder => {
                (vec![down(8), down(16), down(32), down(64)], label_channels)
            }
            NetworkRole::ImageDiscriminator => (vec![down(8), down(16)], 3 + label_channels),
            NetworkRole::VideoDiscriminator => (vec![down(8), down(16)], 3 * video_window),
        };
        Self {
            role,
            stages,
            video_window,
            in_channels,
            embed_dim: 16,
            style_dim: 64,
            frame_height: 64,
            frame_width: 64,
            seed,
        }
    }

    /// Structural checks every spec must pass.
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.stages.is_empty() {
            return Err(TensorError::BadSpec("no stages".into()));
        }
        if self.stages.iter().any(|s| s.channels == 0) {
            return Err(TensorError::BadSpec("zero-width stage".into()));
        }
        if self.frame_height == 0 || self.frame_width == 0 {
            return Err(TensorError::BadSpec("zero frame size".into()));
        }
        let s = self.stages.len() as u32;
        let div = 1usize << s;
        match self.role {
            NetworkRole::Generator => {
                if !self.frame_height.is_multiple_of(div) || !self.frame_width.is_multiple_of(div) {
                    return Err(TensorError::BadSpec(format!(
                        "{}x{} frames not divisible by 2^{s} stages",
                        self.frame_height, self.frame_width
                    )));
                }
                if self.style_dim == 0 {
                    return Err(TensorError::BadSpec("zero style_dim".into()));
                }
            }
            NetworkRole::VideoDiscriminator => {
                if self.video_window < 2 {
                    return Err(TensorError::BadSpec(format!(
                        "video window {} is too short",
                        self.video_window
                    )));
                }
                if self.in_channels != 3 * self.video_window {
                    return Err(TensorError::BadSpec(format!(
                        "video discriminator expects {} input channels for K={}, spec says {}",
                        3 * self.video_window,
                        self.video_window,
                        self.in_channels
                    )));
                }
            }
            _ => {
                if self.in_channels == 0 {
                    return Err(TensorError::BadSpec("zero input channels".into()));
                }
            }
        }
        Ok(())
    }

    /// Checks that an embedding spec produces one tap per generator stage
    /// at matching spatial sizes.
    pub fn validate_embedding_pair(generator: &Self, embed: &Self) -> Result<(), TensorError> {
        generator.validate()?;
        embed.validate()?;
        if generator.role != NetworkRole::Generator
            || !matches!(embed.role, NetworkRole::LabelEmbed | NetworkRole::FlowEmbed)
        {
            return Err(TensorError::BadSpec("expected a generator and an embedding spec".into()));
        }
        if generator.stages.len() != embed.stages.len() {
            return Err(TensorError::BadSpec(format!(
                "generator has {} stages but embedding produces {}",
                generator.stages.len(),
                embed.stages.len()
            )));
        }
        if (generator.frame_height, generator.frame_width)
            != (embed.frame_height, embed.frame_width)
            || generator.embed_dim != embed.embed_dim
        {
            return Err(TensorError::BadSpec(
                "generator and embedding disagree on frame size or embed_dim".into(),
            ));
        }
        Ok(())
    }
}

fn collect_conv<'a>(name: String, l: &'a ConvLayer, out: &mut Vec<(String, &'a Tensor)>) {
    out.push((format!("{name}.weight"), &l.weight));
    out.push((format!("{name}.bias"), &l.bias));
}

fn collect_conv_mut<'a>(
    name: String,
    l: &'a mut ConvLayer,
    out: &mut Vec<(String, &'a mut Tensor)>,
) {
    let ConvLayer { weight, bias, .. } = l;
    out.push((format!("{name}.weight"), weight));
    out.push((format!("{name}.bias"), bias));
}

/// Encoder-decoder that turns concatenated label maps (or a warped previous
/// frame, for the flow role) into one feature tensor per generator stage,
/// deepest resolution first.
#[derive(Debug, Clone)]
pub struct LabelEmbedder {
    spec: NetworkSpec,
    enc: Vec<ConvLayer>,
    dec: Vec<ConvLayer>,
}

impl LabelEmbedder {
    pub fn new(spec: &NetworkSpec) -> Result<Self, TensorError> {
        spec.validate()?;
        if !matches!(spec.role, NetworkRole::LabelEmbed | NetworkRole::FlowEmbed) {
            return Err(TensorError::BadSpec(format!(
                "LabelEmbedder cannot be built for {:?}",
                spec.role
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut enc = Vec::new();
        let mut cin = spec.in_channels;
        for stage in &spec.stages {
            enc.push(ConvLayer::seeded(stage.channels, cin, 3, 2, 1, &mut rng));
            cin = stage.channels;
        }
        let mut dec = Vec::new();
        let mut c = cin;
        for _ in 0..spec.stages.len() {
            dec.push(ConvLayer::seeded(spec.embed_dim, c, 3, 1, 1, &mut rng));
            c = spec.embed_dim;
        }
        Ok(Self { spec: spec.clone(), enc, dec })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// One tap per generator stage, ordered deepest (smallest) first.
    pub fn forward(&self, labels: &Tensor) -> Result<Vec<Tensor>, TensorError> {
        let (_, c, h, w) = labels.dims4()?;
        if c != self.spec.in_channels
            || h != self.spec.frame_height
            || w != self.spec.frame_width
        {
            return Err(TensorError::ShapeMismatch(format!(
                "labels {:?} do not match spec {}x{}x{}",
                labels.shape(),
                self.spec.in_channels,
                self.spec.frame_height,
                self.spec.frame_width
            )));
        }
        let mut x = labels.clone();
        for layer in &self.enc {
            x = leaky_relu(&conv2d(&x, layer)?, LEAKY_SLOPE);
        }
        let mut taps = Vec::with_capacity(self.dec.len());
        for (i, layer) in self.dec.iter().enumerate() {
            if i > 0 {
                x = upsample_nearest(&x, 2)?;
            }
            x = leaky_relu(&conv2d(&x, layer)?, LEAKY_SLOPE);
            taps.push(x.clone());
        }
        Ok(taps)
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.enc.iter().enumerate() {
            collect_conv(format!("enc{i}"), l, &mut out);
        }
        for (i, l) in self.dec.iter().enumerate() {
            collect_conv(format!("dec{i}"), l, &mut out);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.enc.iter_mut().enumerate() {
            collect_conv_mut(format!("enc{i}"), l, &mut out);
        }
        for (i, l) in self.dec.iter_mut().enumerate() {
            collect_conv_mut(format!("dec{i}"), l, &mut out);
        }
        out
    }
}

/// Partial-convolution trunk over the guidance image plus one zero-
/// initialized head per generator stage predicting (1 + δγ, δβ).
///
/// Owned by the generator spec: stage widths, frame size, and seed come
/// from it, so the modulation maps line up with the generator's activation
/// shapes site by site.
#[derive(Debug, Clone)]
pub struct GuidanceEmbedder {
    spec: NetworkSpec,
    trunk: Vec<ConvLayer>,
    heads: Vec<ConvLayer>,
}

impl GuidanceEmbedder {
    pub fn new(generator_spec: &NetworkSpec) -> Result<Self, TensorError> {
        generator_spec.validate()?;
        if generator_spec.role != NetworkRole::Generator {
            return Err(TensorError::BadSpec(
                "guidance embedding is owned by the generator spec".into(),
            ));
        }
        // Offset the stream so the trunk does not mirror generator weights.
        let mut rng = ChaCha8Rng::seed_from_u64(generator_spec.seed ^ 0x9d1c_e5a1);
        let e = generator_spec.embed_dim;
        let s = generator_spec.stages.len();
        let mut trunk = Vec::new();
        let mut cin = 3;
        for _ in 0..s {
            trunk.push(ConvLayer::seeded(e, cin, 3, 2, 1, &mut rng));
            cin = e;
        }
        // Identity-at-zero heads: all-zero weights and biases, so an
        // untrained guidance path modulates by exactly (1, 0).
        let heads = generator_spec
            .stages
            .iter()
            .map(|st| {
                ConvLayer::new(
                    Tensor::zeros(&[2 * st.channels, e, 3, 3]),
                    Tensor::zeros(&[2 * st.channels]),
                    1,
                    1,
                )
                .expect("zero head dimensions are valid")
            })
            .collect();
        Ok(Self { spec: generator_spec.clone(), trunk, heads })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn check_input(&self, g: &GuidanceImage) -> Result<(), TensorError> {
        if g.width() != self.spec.frame_width || g.height() != self.spec.frame_height {
            return Err(TensorError::ShapeMismatch(format!(
                "guidance {}x{} does not match spec {}x{}",
                g.width(),
                g.height(),
                self.spec.frame_width,
                self.spec.frame_height
            )));
        }
        Ok(())
    }

    fn tensorize(g: &GuidanceImage) -> (Tensor, Tensor) {
        let (w, h) = (g.width(), g.height());
        let rgb = Tensor::from_vec(&[1, 3, h, w], g.to_frame().to_planar())
            .expect("guidance rgb is finite");
        let mask_data = g.valid().data().iter().map(|&b| f64::from(b)).collect();
        let mask = Tensor::from_vec(&[1, 1, h, w], mask_data).expect("mask is finite");
        (rgb, mask)
    }

    fn head_params(&self, taps: &[Tensor]) -> Result<Vec<ModulationParams>, TensorError> {
        let mut params = Vec::with_capacity(self.heads.len());
        for (head, tap) in self.heads.iter().zip(taps) {
            let raw = conv2d(tap, head)?;
            let (n, c2, h, w) = raw.dims4()?;
            let c = c2 / 2;
            let plane = h * w;
            let mut gamma = Tensor::zeros(&[n, c, h, w]);
            let mut beta = Tensor::zeros(&[n, c, h, w]);
            for ni in 0..n {
                for ci in 0..c {
                    for p in 0..plane {
                        let dg = raw.data()[(ni * c2 + ci) * plane + p];
                        let db = raw.data()[(ni * c2 + c + ci) * plane + p];
                        gamma.data_mut()[(ni * c + ci) * plane + p] = 1.0 + dg;
                        beta.data_mut()[(ni * c + ci) * plane + p] = db;
                    }
                }
            }
            params.push(ModulationParams::new(gamma, beta, ModulationSource::Guidance)?);
        }
        Ok(params)
    }

    /// Per-stage guidance modulation parameters, deepest stage first. The
    /// validity mask rides along through strided partial convolutions.
    pub fn forward(&self, g: &GuidanceImage) -> Result<Vec<ModulationParams>, TensorError> {
        self.check_input(g)?;
        let (mut x, mut mask) = Self::tensorize(g);
        let mut feats = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            let (y, m) = partial_conv2d(&x, &mask, layer)?;
            x = leaky_relu(&y, LEAKY_SLOPE);
            mask = m;
            feats.push(x.clone());
        }
        feats.reverse(); // deepest first, to match generator stage order
        self.head_params(&feats)
    }

    /// Same trunk with plain convolutions, ignoring the validity mask.
    /// Exists to witness that a hole-free guidance image makes the partial
    /// path collapse to ordinary convolution.
    pub fn forward_plain(&self, g: &GuidanceImage) -> Result<Vec<ModulationParams>, TensorError> {
        self.check_input(g)?;
        let (mut x, _) = Self::tensorize(g);
        let mut feats = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            x = leaky_relu(&conv2d(&x, layer)?, LEAKY_SLOPE);
            feats.push(x.clone());
        }
        feats.reverse();
        self.head_params(&feats)
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter().enumerate() {
            collect_conv(format!("trunk{i}"), l, &mut out);
        }
        for (i, l) in self.heads.iter().enumerate() {
            collect_conv(format!("head{i}"), l, &mut out);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter_mut().enumerate() {
            collect_conv_mut(format!("trunk{i}"), l, &mut out);
        }
        for (i, l) in self.heads.iter_mut().enumerate() {
            collect_conv_mut(format!("head{i}"), l, &mut out);
        }
        out
    }
}

/// One modulation site: normalization followed by multi-source modulation,
/// with per-source heads turning embedding taps into (γ, β).
#[derive(Debug, Clone)]
struct ModulationSite {
    label_head: ConvLayer,
    flow_head: ConvLayer,
}

impl ModulationSite {
    fn seeded(channels: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            label_head: ConvLayer::seeded(2 * channels, embed_dim, 3, 1, 1, rng),
            flow_head: ConvLayer::seeded(2 * channels, embed_dim, 3, 1, 1, rng),
        }
    }

    fn head(
        layer: &ConvLayer,
        tap: &Tensor,
        source: ModulationSource,
    ) -> Result<ModulationParams, TensorError> {
        let raw = conv2d(tap, layer)?;
        let (n, c2, h, w) = raw.dims4()?;
        let c = c2 / 2;
        let plane = h * w;
        let mut gamma = Tensor::zeros(&[n, c, h, w]);
        let mut beta = Tensor::zeros(&[n, c, h, w]);
        for ni in 0..n {
            for ci in 0..c {
                let src_g = (ni * c2 + ci) * plane;
                let src_b = (ni * c2 + c + ci) * plane;
                let dst = (ni * c + ci) * plane;
                for p in 0..plane {
                    gamma.data_mut()[dst + p] = raw.data()[src_g + p];
                    beta.data_mut()[dst + p] = raw.data()[src_b + p];
                }
            }
        }
        ModulationParams::new(gamma, beta, source)
    }

    /// Normalize then modulate. `None` conditioning means the site is a
    /// pure normalization (the ablation case).
    fn apply(
        &self,
        x: &Tensor,
        cond: Option<(&Tensor, Option<&Tensor>, Option<&ModulationParams>)>,
    ) -> Result<Tensor, TensorError> {
        let normed = instance_norm(x)?;
        let Some((label_tap, flow_tap, guidance)) = cond else {
            return Ok(normed);
        };
        let label = Self::head(&self.label_head, label_tap, ModulationSource::Label)?;
        let flow = flow_tap
            .map(|t| Self::head(&self.flow_head, t, ModulationSource::Flow))
            .transpose()?;
        multi_spade(&normed, Some(&label), flow.as_ref(), guidance)
    }
}

/// Per-stage conditioning: label features, then optional flow features
/// and guidance head parameters.
type StageCond<'a> = (&'a Tensor, Option<&'a Tensor>, Option<&'a ModulationParams>);

/// The same triple across all stages, deepest first.
type AllStagesCond<'a> = (&'a [Tensor], Option<&'a [Tensor]>, Option<&'a [ModulationParams]>);

/// One generator stage: a residual block whose three modulation sites all
/// operate at the stage's input width, followed by 2× upsampling.
#[derive(Debug, Clone)]
struct MSpadeBlock {
    site0: ModulationSite,
    site1: ModulationSite,
    site_skip: ModulationSite,
    conv0: ConvLayer,
    conv1: ConvLayer,
    conv_skip: ConvLayer,
}

impl MSpadeBlock {
    fn seeded(cin: usize, cout: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            site0: ModulationSite::seeded(cin, embed_dim, rng),
            site1: ModulationSite::seeded(cin, embed_dim, rng),
            site_skip: ModulationSite::seeded(cin, embed_dim, rng),
            conv0: ConvLayer::seeded(cin, cin, 3, 1, 1, rng),
            conv1: ConvLayer::seeded(cout, cin, 3, 1, 1, rng),
            conv_skip: ConvLayer::seeded(cout, cin, 1, 1, 0, rng),
        }
    }

    fn forward(&self, x: &Tensor, cond: Option<StageCond>) -> Result<Tensor, TensorError> {
        let a = leaky_relu(&self.site0.apply(x, cond)?, LEAKY_SLOPE);
        let a = conv2d(&a, &self.conv0)?;
        let a = leaky_relu(&self.site1.apply(&a, cond)?, LEAKY_SLOPE);
        let main = conv2d(&a, &self.conv1)?;
        let skip = conv2d(&self.site_skip.apply(x, cond)?, &self.conv_skip)?;
        let mut out = main;
        for (o, s) in out.data_mut().iter_mut().zip(skip.data()) {
            *o += s;
        }
        Ok(out)
    }
}

/// The synthesis network: style vector in, frame out, modulated per stage
/// by label, flow, and guidance conditioning.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: NetworkSpec,
    start: ConvLayer,
    blocks: Vec<MSpadeBlock>,
    head: ConvLayer,
    base_h: usize,
    base_w: usize,
}

impl Generator {
    pub fn new(spec: &NetworkSpec) -> Result<Self, TensorError> {
        spec.validate()?;
        if spec.role != NetworkRole::Generator {
            return Err(TensorError::BadSpec(format!(
                "Generator cannot be built for {:?}",
                spec.role
            )));
        }
        let s = spec.stages.len();
        let base_h = spec.frame_height >> s;
        let base_w = spec.frame_width >> s;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let c0 = spec.stages[0].channels;
        // The style-to-seed map is a 1x1 convolution over a 1x1 "image".
        let start = ConvLayer::seeded(c0 * base_h * base_w, spec.style_dim, 1, 1, 0, &mut rng);
        let mut blocks = Vec::with_capacity(s);
        for i in 0..s {
            let cin = spec.stages[i].channels;
            let cout = if i + 1 < s { spec.stages[i + 1].channels } else { cin };
            blocks.push(MSpadeBlock::seeded(cin, cout, spec.embed_dim, &mut rng));
        }
        let c_last = spec.stages[s - 1].channels;
        let head = ConvLayer::seeded(3, c_last, 3, 1, 1, &mut rng);
        Ok(Self { spec: spec.clone(), start, blocks, head, base_h, base_w })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn seed_activation(&self, style: &Tensor) -> Result<Tensor, TensorError> {
        let (n, d) = match style.shape()[..] {
            [n, d] => (n, d),
            _ => {
                return Err(TensorError::ShapeMismatch(format!(
                    "style must be [N, dim], got {:?}",
                    style.shape()
                )))
            }
        };
        if d != self.spec.style_dim {
            return Err(TensorError::ShapeMismatch(format!(
                "style dim {d} does not match spec {}",
                self.spec.style_dim
            )));
        }
        let as_img = Tensor::from_vec(&[n, d, 1, 1], style.data().to_vec())?;
        let mapped = conv2d(&as_img, &self.start)?;
        let c0 = self.spec.stages[0].channels;
        Tensor::from_vec(&[n, c0, self.base_h, self.base_w], mapped.data().to_vec())
    }

    fn run(&self, style: &Tensor, cond: Option<AllStagesCond>) -> Result<Tensor, TensorError> {
        if let Some((label, flow, guidance)) = cond {
            let s = self.blocks.len();
            if label.len() != s
                || flow.is_some_and(|f| f.len() != s)
                || guidance.is_some_and(|g| g.len() != s)
            {
                return Err(TensorError::ShapeMismatch(format!(
                    "conditioning lists must have {s} entries (label {}, flow {:?}, guidance {:?})",
                    label.len(),
                    flow.map(<[Tensor]>::len),
                    guidance.map(<[ModulationParams]>::len),
                )));
            }
        }
        let mut x = self.seed_activation(style)?;
        for (i, block) in self.blocks.iter().enumerate() {
            let stage_cond = cond.map(|(label, flow, guidance)| {
                (&label[i], flow.map(|f| &f[i]), guidance.map(|g| &g[i]))
            });
            x = block.forward(&x, stage_cond)?;
            x = upsample_nearest(&x, 2)?;
        }
        Ok(sigmoid(&conv2d(&x, &self.head)?))
    }

    /// Full conditioned forward pass. Returns an N×3×H×W tensor in [0, 1].
    pub fn forward(
        &self,
        style: &Tensor,
        label_feats: &[Tensor],
        flow_feats: Option<&[Tensor]>,
        guidance_feats: Option<&[ModulationParams]>,
    ) -> Result<Tensor, TensorError> {
        self.run(style, Some((label_feats, flow_feats, guidance_feats)))
    }

    /// Ablation entry point: every modulation site reduces to its
    /// normalization, so the output depends on the style vector alone.
    pub fn forward_unconditioned(&self, style: &Tensor) -> Result<Tensor, TensorError> {
        self.run(style, None)
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        collect_conv("start".into(), &self.start, &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            for (site_name, site) in
                [("site0", &b.site0), ("site1", &b.site1), ("site_skip", &b.site_skip)]
            {
                collect_conv(format!("stage{i}.{site_name}.label"), &site.label_head, &mut out);
                collect_conv(format!("stage{i}.{site_name}.flow"), &site.flow_head, &mut out);
            }
            collect_conv(format!("stage{i}.conv0"), &b.conv0, &mut out);
            collect_conv(format!("stage{i}.conv1"), &b.conv1, &mut out);
            collect_conv(format!("stage{i}.conv_skip"), &b.conv_skip, &mut out);
        }
        collect_conv("head".into(), &self.head, &mut out);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        collect_conv_mut("start".into(), &mut self.start, &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let MSpadeBlock { site0, site1, site_skip, conv0, conv1, conv_skip } = b;
            for (site_name, site) in [("site0", site0), ("site1", site1), ("site_skip", site_skip)]
            {
                let ModulationSite { label_head, flow_head } = site;
                collect_conv_mut(format!("stage{i}.{site_name}.label"), label_head, &mut out);
                collect_conv_mut(format!("stage{i}.{site_name}.flow"), flow_head, &mut out);
            }
            collect_conv_mut(format!("stage{i}.conv0"), conv0, &mut out);
            collect_conv_mut(format!("stage{i}.conv1"), conv1, &mut out);
            collect_conv_mut(format!("stage{i}.conv_skip"), conv_skip, &mut out);
        }
        collect_conv_mut("head".into(), &mut self.head, &mut out);
        out
    }
}

/// Convolutional bottleneck producing the style vector that replaces a
/// random input: strided convs, global average pooling, and a linear map.
#[derive(Debug, Clone)]
pub struct StyleEncoder {
    spec: NetworkSpec,
    layers: Vec<ConvLayer>,
    fc: ConvLayer,
}

impl StyleEncoder {
    pub fn new(spec: &NetworkSpec) -> Result<Self, TensorError> {
        spec.validate()?;
        if !matches!(spec.role, NetworkRole::ImageEncoder | NetworkRole::SegEncoder) {
            return Err(TensorError::BadSpec(format!(
                "StyleEncoder cannot be built for {:?}",
                spec.role
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut layers = Vec::new();
        let mut cin = spec.in_channels;
        for stage in &spec.stages {
            layers.push(ConvLayer::seeded(stage.channels, cin, 3, 2, 1, &mut rng));
            cin = stage.channels;
        }
        let fc = ConvLayer::seeded(spec.style_dim, cin, 1, 1, 0, &mut rng);
        Ok(Self { spec: spec.clone(), layers, fc })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Produces an [N, style_dim] tensor.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.spec.in_channels
            || h != self.spec.frame_height
            || w != self.spec.frame_width
        {
            return Err(TensorError::ShapeMismatch(format!(
                "encoder input {:?} does not match spec {}x{}x{}",
                x.shape(),
                self.spec.in_channels,
                self.spec.frame_height,
                self.spec.frame_width
            )));
        }
        let mut a = x.clone();
        for layer in &self.layers {
            a = leaky_relu(&conv2d(&a, layer)?, LEAKY_SLOPE);
        }
        // Global average pool to 1x1, then the linear map as a 1x1 conv.
        let (_, ca, ha, wa) = a.dims4()?;
        let mut pooled = Tensor::zeros(&[n, ca, 1, 1]);
        let plane = ha * wa;
        for ni in 0..n {
            for ci in 0..ca {
                let base = (ni * ca + ci) * plane;
                pooled.data_mut()[ni * ca + ci] =
                    a.data()[base..base + plane].iter().sum::<f64>() / plane as f64;
            }
        }
        let style = conv2d(&pooled, &self.fc)?;
        Tensor::from_vec(&[n, self.spec.style_dim], style.data().to_vec())
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            collect_conv(format!("conv{i}"), l, &mut out);
        }
        collect_conv("fc".into(), &self.fc, &mut out);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            collect_conv_mut(format!("conv{i}"), l, &mut out);
        }
        collect_conv_mut("fc".into(), &mut self.fc, &mut out);
        out
    }
}

/// Logits and per-layer features from every scale of a discriminator.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub logits: Vec<Tensor>,
    pub features: Vec<Tensor>,
}

/// Two-scale patch discriminator. The video variant consumes K frames
/// concatenated along channels; temporal scales are produced by feeding it
/// windows of stride 1 and 2.
#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: NetworkSpec,
    scales: Vec<Vec<ConvLayer>>,
}

impl Discriminator {
    const SCALES: usize = 2;

    pub fn new(spec: &NetworkSpec) -> Result<Self, TensorError> {
        spec.validate()?;
        if !matches!(
            spec.role,
            NetworkRole::ImageDiscriminator | NetworkRole::VideoDiscriminator
        ) {
            return Err(TensorError::BadSpec(format!(
                "Discriminator cannot be built for {:?}",
                spec.role
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut scales = Vec::new();
        for _ in 0..Self::SCALES {
            let mut layers = Vec::new();
            let mut cin = spec.in_channels;
            for stage in &spec.stages {
                layers.push(ConvLayer::seeded(stage.channels, cin, 3, 2, 1, &mut rng));
                cin = stage.channels;
            }
            layers.push(ConvLayer::seeded(1, cin, 3, 1, 1, &mut rng));
            scales.push(layers);
        }
        Ok(Self { spec: spec.clone(), scales })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn discriminate(&self, x: &Tensor) -> Result<DiscriminatorOutput, TensorError> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.spec.in_channels {
            return Err(TensorError::ShapeMismatch(format!(
                "discriminator input has {c} channels, spec says {}",
                self.spec.in_channels
            )));
        }
        let mut logits = Vec::new();
        let mut features = Vec::new();
        let mut input = x.clone();
        for (si, layers) in self.scales.iter().enumerate() {
            if si > 0 {
                input = avg_pool2(&input)?;
            }
            let mut a = input.clone();
            let (hidden, logit_layer) = layers.split_at(layers.len() - 1);
            for layer in hidden {
                a = leaky_relu(&conv2d(&a, layer)?, LEAKY_SLOPE);
                features.push(a.clone());
            }
            logits.push(conv2d(&a, &logit_layer[0])?);
        }
        Ok(DiscriminatorOutput { logits, features })
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (si, layers) in self.scales.iter().enumerate() {
            for (i, l) in layers.iter().enumerate() {
                collect_conv(format!("scale{si}.conv{i}"), l, &mut out);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (si, layers) in self.scales.iter_mut().enumerate() {
            for (i, l) in layers.iter_mut().enumerate() {
                collect_conv_mut(format!("scale{si}.conv{i}"), l, &mut out);
            }
        }
        out
    }
}

/// Builds the embedder described by `net` and runs it on `labels`.
pub fn embed_labels(labels: &Tensor, net: &NetworkSpec) -> Result<Vec<Tensor>, TensorError> {
    LabelEmbedder::new(net)?.forward(labels)
}

/// Builds the guidance path owned by the generator spec and runs it on `g`.
pub fn embed_guidance(
    g: &GuidanceImage,
    net: &NetworkSpec,
) -> Result<Vec<ModulationParams>, TensorError> {
    GuidanceEmbedder::new(net)?.forward(g)
}

/// Runs the full generator forward pass and unwraps the single frame.
pub fn generator_forward(
    gen: &Generator,
    style: &Tensor,
    label_feats: &[Tensor],
    flow_feats: Option<&[Tensor]>,
    guidance_feats: Option<&[ModulationParams]>,
) -> Result<Frame, TensorError> {
    let out = gen.forward(style, label_feats, flow_feats, guidance_feats)?;
    let (n, c, h, w) = out.dims4()?;
    if n != 1 || c != 3 {
        return Err(TensorError::ShapeMismatch(format!(
            "expected a single RGB frame, got {:?}",
            out.shape()
        )));
    }
    Frame::from_planar(w, h, out.data())
        .map_err(|e| TensorError::ShapeMismatch(format!("frame assembly: {e}")))
}

/// Encodes a previous frame (or label map) into the style vector.
pub fn encode_previous(x: &Tensor, net: &NetworkSpec) -> Result<Tensor, TensorError> {
    StyleEncoder::new(net)?.forward(x)
}
