//! Encoder/decoder blocks and the condition-injection modules.

use rand::Rng;

use super::activation::{relu, relu_backward};
use super::conv::{Conv2d, ConvCache, ConvTranspose2d, ConvTransposeCache};
use super::norm::{InstanceNorm, InstanceNormCache};
use super::{join, Module, Slot};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// `relu(conv2(relu(conv1(x))) + proj(x))` with spectrally normalized 3x3
/// convs and a 1x1 projection when the channel count changes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPair<T: Real = f32> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub proj: Option<Conv2d<T>>,
}

pub struct ResidualCache<T: Real> {
    c1: ConvCache<T>,
    h1: Tensor<T>,
    c2: ConvCache<T>,
    proj: Option<ConvCache<T>>,
    out: Tensor<T>,
}

impl<T: Real> ResidualPair<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::new(in_ch, out_ch, 3, 1, 1, true, rng),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1, true, rng),
            proj: (in_ch != out_ch).then(|| Conv2d::new(in_ch, out_ch, 1, 1, 0, true, rng)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ResidualCache<T>)> {
        let (z1, c1) = self.conv1.forward(x)?;
        let h1 = relu(&z1);
        let (mut z2, c2) = self.conv2.forward(&h1)?;
        let proj = match &self.proj {
            Some(p) => {
                let (s, pc) = p.forward(x)?;
                z2.add_assign(&s);
                Some(pc)
            }
            None => {
                z2.add_assign(x);
                None
            }
        };
        let out = relu(&z2);
        Ok((out.clone(), ResidualCache { c1, h1, c2, proj, out }))
    }

    pub fn backward(&mut self, cache: &ResidualCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dz2 = relu_backward(&cache.out, dy);
        let dh1 = self.conv2.backward(&cache.c2, &dz2, true)?.expect("input grad");
        let dz1 = relu_backward(&cache.h1, &dh1);
        let mut dx = self.conv1.backward(&cache.c1, &dz1, true)?.expect("input grad");
        match (&mut self.proj, &cache.proj) {
            (Some(p), Some(pc)) => dx.add_assign(&p.backward(pc, &dz2, true)?.expect("input grad")),
            _ => dx.add_assign(&dz2),
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for ResidualPair<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(p) = &self.proj {
            p.visit(&join(prefix, "proj"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        if let Some(p) = &mut self.proj {
            p.visit_mut(&join(prefix, "proj"), f);
        }
    }

    fn advance_spectral(&mut self) {
        self.conv1.advance_spectral();
        self.conv2.advance_spectral();
        if let Some(p) = &mut self.proj {
            p.advance_spectral();
        }
    }
}

/// Residual pair followed by a spectrally normalized 4x4 stride-2 conv and
/// ReLU; halves the spatial side.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock<T: Real = f32> {
    pub residual: ResidualPair<T>,
    pub down: Conv2d<T>,
}

pub struct EncoderCache<T: Real> {
    residual: ResidualCache<T>,
    down: ConvCache<T>,
    out: Tensor<T>,
}

impl<T: Real> EncoderBlock<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self {
            residual: ResidualPair::new(in_ch, out_ch, rng),
            down: Conv2d::new(out_ch, out_ch, 4, 2, 1, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, EncoderCache<T>)> {
        let (_, _, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(format!("encoder block needs even spatial dims, got {h}x{w}")));
        }
        let (r, residual) = self.residual.forward(x)?;
        let (z, down) = self.down.forward(&r)?;
        let out = relu(&z);
        Ok((out.clone(), EncoderCache { residual, down, out }))
    }

    pub fn backward(&mut self, cache: &EncoderCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dz = relu_backward(&cache.out, dy);
        let dr = self.down.backward(&cache.down, &dz, true)?.expect("input grad");
        self.residual.backward(&cache.residual, &dr)
    }
}

impl<T: Real> Module<T> for EncoderBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.residual.visit(&join(prefix, "res"), f);
        self.down.visit(&join(prefix, "down"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.residual.visit_mut(&join(prefix, "res"), f);
        self.down.visit_mut(&join(prefix, "down"), f);
    }

    fn advance_spectral(&mut self) {
        self.residual.advance_spectral();
        self.down.advance_spectral();
    }
}

/// Optional skip concat, residual pair, then a 4x4 stride-2 transposed conv
/// and ReLU; doubles the spatial side.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock<T: Real = f32> {
    pub skip_channels: usize,
    pub residual: ResidualPair<T>,
    pub up: ConvTranspose2d<T>,
}

pub struct DecoderCache<T: Real> {
    residual: ResidualCache<T>,
    up: ConvTransposeCache<T>,
    out: Tensor<T>,
    in_channels: usize,
}

impl<T: Real> DecoderBlock<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, skip_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self {
            skip_channels: skip_ch,
            residual: ResidualPair::new(in_ch + skip_ch, in_ch, rng),
            up: ConvTranspose2d::new(in_ch, out_ch, 4, 2, 1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, skip: Option<&Tensor<T>>) -> Result<(Tensor<T>, DecoderCache<T>)> {
        let (_, in_channels, h, w) = x.dims4()?;
        let joined;
        let input = match (skip, self.skip_channels) {
            (None, 0) => x,
            (Some(s), sc) if sc > 0 => {
                let (_, c, sh, sw) = s.dims4()?;
                if (c, sh, sw) != (sc, h, w) {
                    return Err(shape_err(format!(
                        "skip {:?} does not match decoder input {:?} with {sc} skip channels",
                        s.shape(),
                        x.shape()
                    )));
                }
                joined = Tensor::concat_channels(&[x, s])?;
                &joined
            }
            (s, sc) => {
                return Err(shape_err(format!(
                    "decoder block configured with {sc} skip channels, skip present: {}",
                    s.is_some()
                )))
            }
        };
        let (r, residual) = self.residual.forward(input)?;
        let (z, up) = self.up.forward(&r)?;
        let out = relu(&z);
        Ok((out.clone(), DecoderCache { residual, up, out, in_channels }))
    }

    /// Returns `(input gradient, skip gradient)`.
    pub fn backward(&mut self, cache: &DecoderCache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let dz = relu_backward(&cache.out, dy);
        let dr = self.up.backward(&cache.up, &dz, true)?.expect("input grad");
        let dinput = self.residual.backward(&cache.residual, &dr)?;
        if self.skip_channels == 0 {
            return Ok((dinput, None));
        }
        let mut parts = dinput.split_channels(&[cache.in_channels, self.skip_channels])?;
        let dskip = parts.pop();
        Ok((parts.pop().expect("two parts"), dskip))
    }
}

impl<T: Real> Module<T> for DecoderBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.residual.visit(&join(prefix, "res"), f);
        self.up.visit(&join(prefix, "up"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.residual.visit_mut(&join(prefix, "res"), f);
        self.up.visit_mut(&join(prefix, "up"), f);
    }

    fn advance_spectral(&mut self) {
        self.residual.advance_spectral();
    }
}

/// Average-pools a feature map down to `target` by a power-of-two factor.
pub fn avg_pool_to<T: Real>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (th, tw) = target;
    if th == 0 || tw == 0 || h % th != 0 || w % tw != 0 || h / th != w / tw || !(h / th).is_power_of_two() {
        return Err(shape_err(format!(
            "cannot pool {h}x{w} to {th}x{tw} by a power-of-two factor"
        )));
    }
    let f = h / th;
    if f == 1 {
        return Ok(x.clone());
    }
    let scale = T::from_f64(1.0 / (f * f) as f64);
    let mut out = Tensor::zeros(&[n, c, th, tw]);
    for (dst, src) in out.data_mut().chunks_exact_mut(th * tw).zip(x.data().chunks_exact(h * w)) {
        for y in 0..h {
            for xx in 0..w {
                dst[(y / f) * tw + xx / f] += src[y * w + xx];
            }
        }
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}

/// Condition re-injection: pool the condition to the trunk resolution, then
/// one 3x3 conv and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct CondConvModule<T: Real = f32> {
    pub conv: Conv2d<T>,
}

pub struct CondConvCache<T: Real> {
    conv: ConvCache<T>,
    out: Tensor<T>,
}

/// Functional form of [`CondConvModule::forward`] for an arbitrary conv.
pub fn cond_conv_module<T: Real>(condition: &Tensor<T>, target_hw: (usize, usize), conv: &Conv2d<T>) -> Result<Tensor<T>> {
    let pooled = avg_pool_to(condition, target_hw)?;
    let (z, _) = conv.forward(&pooled)?;
    Ok(relu(&z))
}

impl<T: Real> CondConvModule<T> {
    pub fn new<R: Rng + ?Sized>(cond_ch: usize, features: usize, rng: &mut R) -> Self {
        Self { conv: Conv2d::new(cond_ch, features, 3, 1, 1, false, rng) }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&self, condition: &Tensor<T>, target_hw: (usize, usize)) -> Result<(Tensor<T>, CondConvCache<T>)> {
        let pooled = avg_pool_to(condition, target_hw)?;
        let (z, conv) = self.conv.forward(&pooled)?;
        let out = relu(&z);
        Ok((out.clone(), CondConvCache { conv, out }))
    }

    /// Parameter gradients only; the condition is an input, not a learned value.
    pub fn backward(&mut self, cache: &CondConvCache<T>, dy: &Tensor<T>) -> Result<()> {
        let dz = relu_backward(&cache.out, dy);
        self.conv.backward(&cache.conv, &dz, false)?;
        Ok(())
    }
}

impl<T: Real> Module<T> for CondConvModule<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
    }

    fn advance_spectral(&mut self) {}
}

/// Fuses trunk features with injected condition features: two stages of
/// 3x3 conv, instance norm and ReLU, restoring the trunk width.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNormModule<T: Real = f32> {
    pub conv1: Conv2d<T>,
    pub norm1: InstanceNorm<T>,
    pub conv2: Conv2d<T>,
    pub norm2: InstanceNorm<T>,
}

pub struct ConvNormCache<T: Real> {
    c1: ConvCache<T>,
    n1: InstanceNormCache<T>,
    h1: Tensor<T>,
    c2: ConvCache<T>,
    n2: InstanceNormCache<T>,
    out: Tensor<T>,
    /// Pre-ReLU outputs of both stages.
    pub normalized: [Tensor<T>; 2],
}

impl<T: Real> ConvNormModule<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, affine: bool, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::new(in_ch, out_ch, 3, 1, 1, false, rng),
            norm1: InstanceNorm::new(out_ch, affine),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1, false, rng),
            norm2: InstanceNorm::new(out_ch, affine),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvNormCache<T>)> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.conv1.in_channels() {
            return Err(shape_err(format!(
                "conv-norm module expects {} channels, got {c}",
                self.conv1.in_channels()
            )));
        }
        let (z1, c1) = self.conv1.forward(x)?;
        let (a1, n1) = self.norm1.forward(&z1)?;
        let h1 = relu(&a1);
        let (z2, c2) = self.conv2.forward(&h1)?;
        let (a2, n2) = self.norm2.forward(&z2)?;
        let out = relu(&a2);
        Ok((out.clone(), ConvNormCache { c1, n1, h1, c2, n2, out, normalized: [a1, a2] }))
    }

    pub fn backward(&mut self, cache: &ConvNormCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let da2 = relu_backward(&cache.out, dy);
        let dz2 = self.norm2.backward(&cache.n2, &da2)?;
        let dh1 = self.conv2.backward(&cache.c2, &dz2, true)?.expect("input grad");
        let da1 = relu_backward(&cache.h1, &dh1);
        let dz1 = self.norm1.backward(&cache.n1, &da1)?;
        Ok(self.conv1.backward(&cache.c1, &dz1, true)?.expect("input grad"))
    }
}

impl<T: Real> Module<T> for ConvNormModule<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }

    fn advance_spectral(&mut self) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_biases<T: Real>(m: &mut impl Module<T>) {
        m.visit_mut("", &mut |name, slot| {
            if let (true, Slot::Param(p)) = (name.ends_with("bias"), slot) {
                p.value.fill(T::zero());
            }
        });
    }

    #[test]
    fn encoder_block_halves_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = EncoderBlock::<f32>::new(64, 128, &mut rng);
        let x = Tensor::randn(&[1, 64, 64, 64], 1.0, &mut rng);
        let (y, _) = block.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 128, 32, 32]);
    }

    #[test]
    fn encoder_block_zero_in_zero_out_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut block = EncoderBlock::<f32>::new(4, 8, &mut rng);
        zero_biases(&mut block);
        let (y, _) = block.forward(&Tensor::zeros(&[2, 4, 8, 8])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let x = Tensor::randn(&[2, 4, 8, 8], 1.0, &mut rng);
        assert_eq!(block.forward(&x).unwrap().0, block.forward(&x).unwrap().0);
    }

    #[test]
    fn encoder_block_rejects_odd_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = EncoderBlock::<f32>::new(2, 2, &mut rng);
        assert!(block.forward(&Tensor::zeros(&[1, 2, 7, 8])).is_err());
    }

    #[test]
    fn decoder_block_doubles_side_with_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = DecoderBlock::<f32>::new(512, 512, 512, &mut rng);
        let x = Tensor::randn(&[1, 512, 4, 4], 1.0, &mut rng);
        let s = Tensor::randn(&[1, 512, 4, 4], 1.0, &mut rng);
        let (y, _) = block.forward(&x, Some(&s)).unwrap();
        assert_eq!(y.shape(), &[1, 512, 8, 8]);
    }

    #[test]
    fn decoder_block_zero_in_zero_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut block = DecoderBlock::<f32>::new(8, 8, 4, &mut rng);
        zero_biases(&mut block);
        let z = Tensor::zeros(&[1, 8, 4, 4]);
        let (y, _) = block.forward(&z, Some(&z)).unwrap();
        assert_eq!(y.shape(), &[1, 4, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decoder_block_rejects_mismatched_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let block = DecoderBlock::<f32>::new(8, 8, 4, &mut rng);
        let x = Tensor::zeros(&[1, 8, 4, 4]);
        assert!(block.forward(&x, Some(&Tensor::zeros(&[1, 8, 8, 8]))).is_err());
        assert!(block.forward(&x, None).is_err());
    }

    #[test]
    fn cond_conv_pools_and_convolves() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let module = CondConvModule::<f32>::new(1, 64, &mut rng);
        let cond = Tensor::full(&[1, 1, 64, 64], 1.0);
        assert!(avg_pool_to(&cond, (16, 16)).unwrap().data().iter().all(|&v| v == 1.0));
        let (y, _) = module.forward(&cond, (16, 16)).unwrap();
        assert_eq!(y.shape(), &[1, 64, 16, 16]);
        let y0 = cond_conv_module(&Tensor::zeros(&[1, 1, 64, 64]), (16, 16), &module.conv).unwrap();
        assert!(y0.data().iter().all(|&v| v == 0.0));
        assert!(module.forward(&cond, (24, 24)).is_err());
    }

    #[test]
    fn conv_norm_restores_trunk_width_with_centred_stages() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let module = ConvNormModule::<f64>::new(256 + 64, 256, false, &mut rng);
        let x = Tensor::randn(&[1, 320, 16, 16], 1.0, &mut rng);
        let (y, cache) = module.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 256, 16, 16]);
        for stage in &cache.normalized {
            for plane in stage.data().chunks(256) {
                let mean = plane.iter().sum::<f64>() / 256.0;
                assert!(mean.abs() <= 1e-4);
            }
        }
        assert_eq!(module.forward(&x).unwrap().0, y);
        assert!(module.forward(&Tensor::zeros(&[1, 300, 16, 16])).is_err());
    }
}
