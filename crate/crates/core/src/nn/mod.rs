//! Layers with explicit forward and backward passes.
//!
//! `forward` takes `&self` and returns the output together with whatever the
//! backward pass needs, so a frozen network can be shared across threads.
//! `backward` accumulates parameter gradients into the layer and returns the
//! gradient with respect to the layer input.

mod activation;
mod blocks;
mod conv;
mod norm;
mod spectral;

pub use activation::{leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward};
pub use blocks::{
    avg_pool_to, cond_conv_module, CondConvCache, CondConvModule, ConvNormCache, ConvNormModule,
    DecoderBlock, DecoderCache, EncoderBlock, EncoderCache, ResidualCache, ResidualPair,
};
pub use conv::{Conv2d, ConvCache, ConvTranspose2d, ConvTransposeCache};
pub use norm::{instance_normalize, InstanceNorm, InstanceNormCache};
pub use spectral::{spectral_normalize, SpectralState};

use rand::Rng;

use crate::tensor::{Real, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    /// Zero-mean Gaussian init, std 0.02.
    pub fn gaussian<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        Self::new(Tensor::randn(shape, 0.02, rng))
    }
}

/// A stored tensor reached while walking a module tree.
pub enum Slot<'a, T: Real> {
    Param(&'a mut Param<T>),
    /// Non-trainable state such as power-iteration vectors.
    Buffer(&'a mut Tensor<T>),
}

pub trait Module<T: Real> {
    /// Visits every parameter value and buffer under a dotted name.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));

    /// Mutable counterpart of [`Module::visit`]; visits in the same order.
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>));

    /// Runs one power-iteration update on every spectrally normalized weight.
    fn advance_spectral(&mut self);

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.grad.fill(T::zero());
            }
        });
    }

    /// Trainable scalar count (buffers excluded).
    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |name, t| {
            if !name.ends_with(".u") {
                n += t.len();
            }
        });
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
