//! Generator (encoder with condition re-injection, decoder with low-resolution
//! skips) and PatchGAN discriminator.
//!
//! Generator layout for side `S` and depth `D = channels.len()`:
//!
//! ```text
//! input (masked image | mask | condition | noise)
//!   stem: SN conv 3x3 -> base, ReLU                         side S
//!   encoder block d = 1..D: channels[d-1], side S / 2^d
//!     if d in cond_inject_depths:
//!       concat(trunk, CondConv(pool(condition))) -> ConvNorm -> trunk
//!   bottleneck residual pair                                side S / 2^D
//!   decoder block d = D..1: concat(x, skip_d if d in skip_depths)
//!     -> residual pair -> transposed conv to channels[d-2] (base for d = 1)
//!   head: conv 3x3 -> 3, tanh
//! ```

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::imaging::{Condition, Image, Mask};
use crate::nn::{
    join, leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward, CondConvCache,
    CondConvModule, Conv2d, ConvCache, ConvNormCache, ConvNormModule, DecoderBlock, DecoderCache,
    EncoderBlock, EncoderCache, Module, ResidualCache, ResidualPair, Slot,
};
use crate::tensor::{Real, Tensor};

pub const IMAGE_CHANNELS: usize = 3;
/// Index of the condition channel inside the generator input.
pub const CONDITION_CHANNEL: usize = IMAGE_CHANNELS + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub image_side: usize,
    pub base_channels: usize,
    /// Output width of encoder block `d` at index `d - 1`.
    pub channels: Vec<usize>,
    /// 1-based encoder depths that receive the condition.
    pub cond_inject_depths: Vec<usize>,
    /// 1-based encoder depths forwarded to the decoder.
    pub skip_depths: Vec<usize>,
    pub noise_channels: usize,
    /// Width of the condition features produced at each injection depth.
    pub cond_features: usize,
    pub instance_norm_affine: bool,
    pub spectral_iterations: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            base_channels: 64,
            channels: vec![64, 128, 256, 512, 512],
            cond_inject_depths: vec![3, 4, 5],
            skip_depths: vec![3, 4, 5],
            noise_channels: 1,
            cond_features: 64,
            instance_norm_affine: false,
            spectral_iterations: 1,
        }
    }
}

impl GeneratorConfig {
    /// The small configuration used for gradient checks: side 16, widths 4/8/8.
    pub fn miniature() -> Self {
        Self {
            image_side: 16,
            base_channels: 4,
            channels: vec![4, 8, 8],
            cond_inject_depths: vec![2, 3],
            skip_depths: vec![1, 2, 3],
            noise_channels: 1,
            cond_features: 2,
            instance_norm_affine: false,
            spectral_iterations: 1,
        }
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn input_channels(&self) -> usize {
        IMAGE_CHANNELS + 2 + self.noise_channels
    }

    /// Width at depth `d` (`d = 0` is the stem).
    pub fn width_at(&self, d: usize) -> usize {
        if d == 0 {
            self.base_channels
        } else {
            self.channels[d - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let depth = self.depth();
        if depth == 0 || self.channels.contains(&0) || self.base_channels == 0 {
            return bad("channel widths must be positive and non-empty".into());
        }
        if !self.image_side.is_power_of_two() || self.image_side < 16 {
            return bad(format!("image_side {} must be a power of two >= 16", self.image_side));
        }
        if self.image_side >> depth < 2 {
            return bad(format!(
                "image_side {} too small for {depth} encoder blocks (needs side / 2^depth >= 2)",
                self.image_side
            ));
        }
        let mut skips = self.skip_depths.clone();
        skips.sort_unstable();
        skips.dedup();
        if skips.len() != 3 || skips.iter().any(|&d| d == 0 || d > depth) {
            return bad(format!("skip_depths {:?} must be three distinct depths in 1..={depth}", self.skip_depths));
        }
        if self.cond_inject_depths.iter().any(|&d| d == 0 || d > depth) {
            return bad(format!("cond_inject_depths {:?} outside 1..={depth}", self.cond_inject_depths));
        }
        if self.noise_channels == 0 || self.cond_features == 0 || self.spectral_iterations == 0 {
            return bad("noise_channels, cond_features and spectral_iterations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Widths of the stride-2 layers.
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { channels: vec![64, 128, 256, 512], leaky_slope: 0.2 }
    }
}

impl DiscriminatorConfig {
    pub fn miniature() -> Self {
        Self { channels: vec![4, 8], leaky_slope: 0.2 }
    }

    /// Side of the score map for a square input.
    pub fn score_side(&self, image_side: usize) -> usize {
        (image_side >> self.channels.len()).saturating_sub(1)
    }

    pub fn validate(&self, image_side: usize) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("discriminator widths must be positive and non-empty".into()));
        }
        if image_side >> self.channels.len() < 2 {
            return Err(Error::Config(format!(
                "discriminator with {} stride-2 layers needs image side >= {}",
                self.channels.len(),
                2 << self.channels.len()
            )));
        }
        Ok(())
    }
}

/// The generator's conditional input: `x_1, ..., x_N` of the losses.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorInputBundle {
    pub masked_image: Image,
    pub mask: Mask,
    pub condition: Condition,
    /// `noise_channels` planes of standard Gaussian samples, CHW.
    pub noise: Vec<f32>,
}

impl GeneratorInputBundle {
    /// Builds a bundle from an unmasked image, zeroing its holes.
    pub fn new(image: &Image, mask: Mask, condition: Condition, noise: Vec<f32>) -> Result<Self> {
        let masked_image = crate::imaging::apply_mask(image, &mask)?;
        let bundle = Self { masked_image, mask, condition, noise };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn sample_noise<R: Rng + ?Sized>(channels: usize, side: usize, rng: &mut R) -> Vec<f32> {
        (0..channels * side * side).map(|_| StandardNormal.sample(rng)).collect()
    }

    pub fn side(&self) -> usize {
        self.masked_image.height
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.masked_image.height, self.masked_image.width);
        if self.masked_image.channels != IMAGE_CHANNELS {
            return Err(shape_err("bundle image must have 3 channels"));
        }
        if (self.mask.height(), self.mask.width()) != (h, w) || (self.condition.height(), self.condition.width()) != (h, w) {
            return Err(shape_err("bundle planes must share the image size"));
        }
        if self.noise.is_empty() || !self.noise.len().is_multiple_of(h * w) {
            return Err(shape_err("noise must be whole planes of the image size"));
        }
        if !self.mask.0.is_binary() {
            return Err(Error::Data("mask must be binary".into()));
        }
        let plane = h * w;
        let leaks = self
            .masked_image
            .data
            .iter()
            .enumerate()
            .any(|(i, &v)| self.mask.0.data[i % plane] == 1.0 && v != 0.0);
        if leaks {
            return Err(Error::Data("masked image has non-zero values inside holes".into()));
        }
        Ok(())
    }

    pub fn noise_channels(&self) -> usize {
        self.noise.len() / (self.masked_image.height * self.masked_image.width)
    }
}

/// Stacks bundles into the `(N, 3 + 1 + 1 + noise, S, S)` generator input.
pub fn stack_bundles<T: Real>(bundles: &[&GeneratorInputBundle]) -> Result<Tensor<T>> {
    let first = bundles.first().ok_or_else(|| shape_err("empty batch"))?;
    let (h, w) = (first.masked_image.height, first.masked_image.width);
    let nc = first.noise_channels();
    let channels = IMAGE_CHANNELS + 2 + nc;
    let mut data = Vec::with_capacity(bundles.len() * channels * h * w);
    for b in bundles {
        if (b.masked_image.height, b.masked_image.width) != (h, w) || b.noise_channels() != nc {
            return Err(shape_err("bundles in a batch must share sizes"));
        }
        let planes = b
            .masked_image
            .data
            .iter()
            .chain(&b.mask.0.data)
            .chain(&b.condition.0.data)
            .chain(&b.noise);
        data.extend(planes.map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[bundles.len(), channels, h, w], data)
}

/// Stacks images into an `(N, C, H, W)` tensor.
pub fn stack_images<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| shape_err("empty batch"))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        first.check_same_shape(img)?;
        data.extend(img.data.iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[images.len(), first.channels, first.height, first.width], data)
}

/// Splits an `(N, C, H, W)` tensor back into images.
pub fn unstack_images<T: Real>(t: &Tensor<T>) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4()?;
    (0..n)
        .map(|b| {
            let data = t.data()[b * c * h * w..(b + 1) * c * h * w].iter().map(|v| v.as_f64() as f32).collect();
            Image::new(c, h, w, data)
        })
        .collect()
}

/// Stacks masks into an `(N, 1, H, W)` tensor.
pub fn stack_masks<T: Real>(masks: &[&Mask]) -> Result<Tensor<T>> {
    let first = masks.first().ok_or_else(|| shape_err("empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height(), m.width()) != (h, w) {
            return Err(shape_err("masks in a batch must share sizes"));
        }
        data.extend(m.0.data.iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[masks.len(), 1, h, w], data)
}

/// Tensor form of [`crate::imaging::composite`]: `mask * raw + (1 - mask) * original`
/// with a `(N, 1, H, W)` mask broadcast over channels.
pub fn composite_tensor<T: Real>(raw: &Tensor<T>, original: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = raw.dims4()?;
    if original.shape() != raw.shape() || mask.shape() != [n, 1, h, w] {
        return Err(shape_err("composite operand shapes differ"));
    }
    let plane = h * w;
    let mut out = original.clone();
    for (i, (o, &r)) in out.data_mut().iter_mut().zip(raw.data()).enumerate() {
        let m = mask.data()[(i / (c * plane)) * plane + i % plane];
        if m != T::zero() {
            *o = m * r + (T::one() - m) * *o;
        }
    }
    Ok(out)
}

/// Gradient of the composite with respect to `raw`.
pub fn composite_backward<T: Real>(dout: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, h, w) = dout.dims4()?;
    let plane = h * w;
    let mut d = dout.clone();
    for (i, v) in d.data_mut().iter_mut().enumerate() {
        *v *= mask.data()[(i / (c * plane)) * plane + i % plane];
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Injection<T: Real = f32> {
    pub cond: CondConvModule<T>,
    pub fuse: ConvNormModule<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Real = f32> {
    pub config: GeneratorConfig,
    pub stem: Conv2d<T>,
    pub encoders: Vec<EncoderBlock<T>>,
    /// Indexed by depth - 1.
    pub injections: Vec<Option<Injection<T>>>,
    pub bottleneck: ResidualPair<T>,
    /// Indexed by depth - 1; block `d` upsamples from side `S / 2^d`.
    pub decoders: Vec<DecoderBlock<T>>,
    pub head: Conv2d<T>,
}

pub struct GeneratorCache<T: Real> {
    stem: ConvCache<T>,
    stem_out: Tensor<T>,
    encoders: Vec<EncoderCache<T>>,
    injections: Vec<Option<(CondConvCache<T>, ConvNormCache<T>)>>,
    bottleneck: ResidualCache<T>,
    decoders: Vec<DecoderCache<T>>,
    head: ConvCache<T>,
    output: Tensor<T>,
    skips_ablated: bool,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let depth = config.depth();
        let stem = Conv2d::new(config.input_channels(), config.base_channels, 3, 1, 1, true, rng);
        let mut encoders = Vec::with_capacity(depth);
        let mut injections = Vec::with_capacity(depth);
        for d in 1..=depth {
            let width = config.width_at(d);
            encoders.push(EncoderBlock::new(config.width_at(d - 1), width, rng));
            injections.push(config.cond_inject_depths.contains(&d).then(|| Injection {
                cond: CondConvModule::new(1, config.cond_features, rng),
                fuse: ConvNormModule::new(width + config.cond_features, width, config.instance_norm_affine, rng),
            }));
        }
        let bottleneck = ResidualPair::new(config.width_at(depth), config.width_at(depth), rng);
        let decoders = (1..=depth)
            .map(|d| {
                let skip = if config.skip_depths.contains(&d) { config.width_at(d) } else { 0 };
                DecoderBlock::new(config.width_at(d), skip, config.width_at(d - 1), rng)
            })
            .collect();
        let head = Conv2d::new(config.base_channels, IMAGE_CHANNELS, 3, 1, 1, false, rng);
        let mut g = Self { config, stem, encoders, injections, bottleneck, decoders, head };
        g.set_spectral_iterations();
        Ok(g)
    }

    fn set_spectral_iterations(&mut self) {
        let iters = self.config.spectral_iterations;
        for_each_spectral(self, iters);
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, GeneratorCache<T>)> {
        self.forward_with(input, false)
    }

    /// Forward pass; `ablate_skips` replaces every skip tensor with zeros.
    pub fn forward_with(&self, input: &Tensor<T>, ablate_skips: bool) -> Result<(Tensor<T>, GeneratorCache<T>)> {
        let cfg = &self.config;
        let (_, c, h, w) = input.dims4()?;
        if c != cfg.input_channels() || h != cfg.image_side || w != cfg.image_side {
            return Err(shape_err(format!(
                "generator expects {}x{}x{} input, got {:?}",
                cfg.input_channels(),
                cfg.image_side,
                cfg.image_side,
                input.shape()
            )));
        }
        let condition = input.split_channels(&[CONDITION_CHANNEL, 1, cfg.noise_channels])?.swap_remove(1);

        let (z, stem) = self.stem.forward(input)?;
        let mut h = relu(&z);
        let stem_out = h.clone();
        let depth = cfg.depth();
        let mut encoders = Vec::with_capacity(depth);
        let mut injections = Vec::with_capacity(depth);
        let mut features = Vec::with_capacity(depth);
        for (block, inj) in self.encoders.iter().zip(&self.injections) {
            let (out, cache) = block.forward(&h)?;
            h = out;
            encoders.push(cache);
            let inj_cache = match inj {
                Some(inj) => {
                    let (_, _, fh, fw) = h.dims4()?;
                    let (cf, cc) = inj.cond.forward(&condition, (fh, fw))?;
                    let (fused, fc) = inj.fuse.forward(&Tensor::concat_channels(&[&h, &cf])?)?;
                    h = fused;
                    Some((cc, fc))
                }
                None => None,
            };
            injections.push(inj_cache);
            features.push(h.clone());
        }
        let (mut h, bottleneck) = self.bottleneck.forward(&h)?;
        let mut decoders: Vec<Option<DecoderCache<T>>> = (0..depth).map(|_| None).collect();
        for d in (1..=depth).rev() {
            let block = &self.decoders[d - 1];
            let zeros;
            let skip = if block.skip_channels == 0 {
                None
            } else if ablate_skips {
                zeros = Tensor::zeros(features[d - 1].shape());
                Some(&zeros)
            } else {
                Some(&features[d - 1])
            };
            let (out, cache) = block.forward(&h, skip)?;
            h = out;
            decoders[d - 1] = Some(cache);
        }
        let (z, head) = self.head.forward(&h)?;
        let output = tanh(&z);
        let cache = GeneratorCache {
            stem,
            stem_out,
            encoders,
            injections,
            bottleneck,
            decoders: decoders.into_iter().map(|c| c.expect("every depth decoded")).collect(),
            head,
            output: output.clone(),
            skips_ablated: ablate_skips,
        };
        Ok((output, cache))
    }

    /// Accumulates parameter gradients for `d loss / d output = dy`.
    pub fn backward(&mut self, cache: &GeneratorCache<T>, dy: &Tensor<T>) -> Result<()> {
        let depth = self.config.depth();
        let dz = tanh_backward(&cache.output, dy);
        let mut dh = self.head.backward(&cache.head, &dz, true)?.expect("input grad");
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
        for d in 1..=depth {
            let (dx, dskip) = self.decoders[d - 1].backward(&cache.decoders[d - 1], &dh)?;
            dh = dx;
            if !cache.skips_ablated {
                skip_grads[d - 1] = dskip;
            }
        }
        dh = self.bottleneck.backward(&cache.bottleneck, &dh)?;
        for d in (1..=depth).rev() {
            if let Some(ds) = &skip_grads[d - 1] {
                dh.add_assign(ds);
            }
            if let (Some(inj), Some((cc, fc))) = (&mut self.injections[d - 1], &cache.injections[d - 1]) {
                let dcat = inj.fuse.backward(fc, &dh)?;
                let mut parts = dcat.split_channels(&[self.config.width_at(d), self.config.cond_features])?;
                inj.cond.backward(cc, &parts[1])?;
                dh = parts.swap_remove(0);
            }
            dh = self.encoders[d - 1].backward(&cache.encoders[d - 1], &dh)?;
        }
        let dz = relu_backward(&cache.stem_out, &dh);
        self.stem.backward(&cache.stem, &dz, false)?;
        Ok(())
    }

    /// Inference on bundles; returns raw (un-composited) images in `[-1, 1]`.
    pub fn infer(&self, bundles: &[&GeneratorInputBundle]) -> Result<Vec<Image>> {
        let input = stack_bundles::<T>(bundles)?;
        let (out, _) = self.forward(&input)?;
        unstack_images(&out)
    }
}

fn for_each_spectral<T: Real>(g: &mut Generator<T>, iters: usize) {
    let mut set = |c: &mut Conv2d<T>| {
        if let Some(s) = &mut c.spectral {
            s.iterations_per_step = iters;
        }
    };
    set(&mut g.stem);
    let pair = |p: &mut ResidualPair<T>, set: &mut dyn FnMut(&mut Conv2d<T>)| {
        set(&mut p.conv1);
        set(&mut p.conv2);
        if let Some(pr) = &mut p.proj {
            set(pr);
        }
    };
    for e in &mut g.encoders {
        pair(&mut e.residual, &mut set);
        set(&mut e.down);
    }
    pair(&mut g.bottleneck, &mut set);
    for d in &mut g.decoders {
        pair(&mut d.residual, &mut set);
    }
}

impl<T: Real> Module<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, (e, inj)) in self.encoders.iter().zip(&self.injections).enumerate() {
            e.visit(&join(prefix, &format!("enc{}", i + 1)), f);
            if let Some(inj) = inj {
                inj.cond.visit(&join(prefix, &format!("cond{}", i + 1)), f);
                inj.fuse.visit(&join(prefix, &format!("fuse{}", i + 1)), f);
            }
        }
        self.bottleneck.visit(&join(prefix, "bottleneck"), f);
        for (i, d) in self.decoders.iter().enumerate() {
            d.visit(&join(prefix, &format!("dec{}", i + 1)), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, (e, inj)) in self.encoders.iter_mut().zip(&mut self.injections).enumerate() {
            e.visit_mut(&join(prefix, &format!("enc{}", i + 1)), f);
            if let Some(inj) = inj {
                inj.cond.visit_mut(&join(prefix, &format!("cond{}", i + 1)), f);
                inj.fuse.visit_mut(&join(prefix, &format!("fuse{}", i + 1)), f);
            }
        }
        self.bottleneck.visit_mut(&join(prefix, "bottleneck"), f);
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("dec{}", i + 1)), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }

    fn advance_spectral(&mut self) {
        self.stem.advance_spectral();
        self.encoders.iter_mut().for_each(|e| e.advance_spectral());
        self.bottleneck.advance_spectral();
        self.decoders.iter_mut().for_each(|d| d.advance_spectral());
    }
}

/// Raw patch scores, `(N, 1, h', w')`, no sigmoid.
pub type PatchScoreMap<T = f32> = Tensor<T>;

/// PatchGAN discriminator: stride-2 4x4 spectrally normalized convs with
/// LeakyReLU, then a stride-1 4x4 conv to one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Real = f32> {
    pub config: DiscriminatorConfig,
    pub image_side: usize,
    pub layers: Vec<Conv2d<T>>,
    pub output: Conv2d<T>,
}

pub struct DiscriminatorCache<T: Real> {
    layers: Vec<(ConvCache<T>, Tensor<T>)>,
    output: ConvCache<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, image_side: usize, rng: &mut R) -> Result<Self> {
        config.validate(image_side)?;
        let mut in_ch = IMAGE_CHANNELS;
        let mut layers = Vec::new();
        for &c in &config.channels {
            layers.push(Conv2d::new(in_ch, c, 4, 2, 1, true, rng));
            in_ch = c;
        }
        let output = Conv2d::new(in_ch, 1, 4, 1, 1, true, rng);
        Ok(Self { config, image_side, layers, output })
    }

    fn slope(&self) -> T {
        T::from_f64(self.config.leaky_slope)
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<(PatchScoreMap<T>, DiscriminatorCache<T>)> {
        let (_, c, h, w) = image.dims4()?;
        if (c, h, w) != (IMAGE_CHANNELS, self.image_side, self.image_side) {
            return Err(shape_err(format!(
                "discriminator expects 3x{}x{} images, got {:?}",
                self.image_side,
                self.image_side,
                image.shape()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut h = image.clone();
        for conv in &self.layers {
            let (z, cache) = conv.forward(&h)?;
            h = leaky_relu(&z, self.slope());
            layers.push((cache, z));
        }
        let (scores, output) = self.output.forward(&h)?;
        Ok((scores, DiscriminatorCache { layers, output }))
    }

    /// Accumulates parameter gradients; returns the image gradient when asked.
    pub fn backward(&mut self, cache: &DiscriminatorCache<T>, dscores: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let slope = self.slope();
        let mut dh = self.output.backward(&cache.output, dscores, true)?.expect("input grad");
        let count = self.layers.len();
        for (i, (conv, (cc, z))) in self.layers.iter_mut().zip(&cache.layers).enumerate().rev() {
            let dz = leaky_relu_backward(z, &dh, slope);
            let need = i > 0 || need_input_grad;
            match conv.backward(cc, &dz, need)? {
                Some(d) => dh = d,
                None => {
                    debug_assert!(i == 0 && count > 0);
                    return Ok(None);
                }
            }
        }
        Ok(Some(dh))
    }

    /// Image gradient without touching any discriminator gradient buffers.
    pub fn input_grad(&self, cache: &DiscriminatorCache<T>, dscores: &Tensor<T>) -> Result<Tensor<T>> {
        let slope = self.slope();
        let mut dh = self.output.input_grad(&cache.output, dscores)?;
        for (conv, (cc, z)) in self.layers.iter().zip(&cache.layers).rev() {
            dh = conv.input_grad(cc, &leaky_relu_backward(z, &dh, slope))?;
        }
        Ok(dh)
    }
}

impl<T: Real> Module<T> for Discriminator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("conv{}", i + 1)), f);
        }
        self.output.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("conv{}", i + 1)), f);
        }
        self.output.visit_mut(&join(prefix, "out"), f);
    }

    fn advance_spectral(&mut self) {
        self.layers.iter_mut().for_each(|l| l.advance_spectral());
        self.output.advance_spectral();
    }
}
