//! Instance normalization: per-sample, per-channel standardization.

use super::{join, Module, Param, Slot};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct InstanceNormCache<T: Real> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

/// `(x - mean) / sqrt(var + eps)` over every `(batch, channel)` plane, using
/// the biased variance.
pub fn instance_normalize<T: Real>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, InstanceNormCache<T>)> {
    let (_, _, h, w) = x.dims4()?;
    if !x.is_finite() {
        return Err(Error::InvalidParameter("non-finite instance-norm input".into()));
    }
    let plane = h * w;
    let count = T::from_f64(plane as f64);
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.len() / plane);
    for chunk in out.data_mut().chunks_exact_mut(plane) {
        let mean = chunk.iter().copied().sum::<T>() / count;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = T::one() / (var + eps).sqrt();
        chunk.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_std.push(inv);
    }
    let cache = InstanceNormCache { normalized: out.clone(), inv_std };
    Ok((out, cache))
}

fn instance_normalize_backward<T: Real>(cache: &InstanceNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
    let plane = dy.len() / cache.inv_std.len();
    let count = T::from_f64(plane as f64);
    let mut dx = dy.clone();
    for ((g, xhat), &inv) in dx
        .data_mut()
        .chunks_exact_mut(plane)
        .zip(cache.normalized.data().chunks_exact(plane))
        .zip(&cache.inv_std)
    {
        let mean_g = g.iter().copied().sum::<T>() / count;
        let mean_gx = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / count;
        for (gi, &xi) in g.iter_mut().zip(xhat) {
            *gi = inv * (*gi - mean_g - xi * mean_gx);
        }
    }
    dx
}

/// Instance normalization layer with an optional per-channel affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNorm<T: Real = f32> {
    pub eps: T,
    /// `(gamma, beta)` when affine parameters are enabled.
    pub affine: Option<(Param<T>, Param<T>)>,
}

impl<T: Real> InstanceNorm<T> {
    pub fn new(channels: usize, affine: bool) -> Self {
        let affine = affine.then(|| (Param::new(Tensor::full(&[channels], T::one())), Param::zeros(&[channels])));
        Self { eps: T::from_f64(1e-5), affine }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, InstanceNormCache<T>)> {
        let (mut y, cache) = instance_normalize(x, self.eps)?;
        if let Some((gamma, beta)) = &self.affine {
            let (_, c, h, w) = y.dims4()?;
            for (i, chunk) in y.data_mut().chunks_exact_mut(h * w).enumerate() {
                let (g, b) = (gamma.value.data()[i % c], beta.value.data()[i % c]);
                chunk.iter_mut().for_each(|v| *v = *v * g + b);
            }
        }
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: &InstanceNormCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match &mut self.affine {
            None => Ok(instance_normalize_backward(cache, dy)),
            Some((gamma, beta)) => {
                let (_, c, h, w) = dy.dims4()?;
                let mut scaled = dy.clone();
                for (i, (g, xhat)) in scaled
                    .data_mut()
                    .chunks_exact_mut(h * w)
                    .zip(cache.normalized.data().chunks_exact(h * w))
                    .enumerate()
                {
                    let ch = i % c;
                    gamma.grad.data_mut()[ch] += g.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>();
                    beta.grad.data_mut()[ch] += g.iter().copied().sum::<T>();
                    let gv = gamma.value.data()[ch];
                    g.iter_mut().for_each(|v| *v *= gv);
                }
                Ok(instance_normalize_backward(cache, &scaled))
            }
        }
    }
}

impl<T: Real> Module<T> for InstanceNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some((g, b)) = &self.affine {
            f(&join(prefix, "gamma"), &g.value);
            f(&join(prefix, "beta"), &b.value);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        if let Some((g, b)) = &mut self.affine {
            f(&join(prefix, "gamma"), Slot::Param(g));
            f(&join(prefix, "beta"), Slot::Param(b));
        }
    }

    fn advance_spectral(&mut self) {}
}
