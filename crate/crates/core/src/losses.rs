//! Least-squares adversarial losses and the L1 identity loss.
//!
//! All reductions are means over batch, channel and spatial positions. The
//! `*_with_grad` forms also return the gradient with respect to their
//! (first) tensor argument(s).

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Real term of the discriminator loss.
    pub lambda1: f64,
    /// Fake term of the discriminator loss.
    pub lambda2: f64,
    /// Generator adversarial term.
    pub lambda3: f64,
    /// Identity (L1) term.
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.5, lambda2: 0.5, lambda3: 1.0, lambda4: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConvention {
    pub real_label: f64,
    pub fake_label: f64,
}

impl Default for LabelConvention {
    fn default() -> Self {
        Self { real_label: 1.0, fake_label: 0.0 }
    }
}

impl LabelConvention {
    pub fn validate(&self) -> Result<()> {
        if self.real_label == self.fake_label {
            return Err(Error::Config("real and fake labels must differ".into()));
        }
        Ok(())
    }
}

/// A scalar loss and the gradient with respect to one input.
#[derive(Clone, Debug)]
pub struct LossGrad<T: Real> {
    pub value: T,
    pub grad: Tensor<T>,
}

fn check_finite<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("non-finite {what}")))
    }
}

/// `weight * mean((scores - label)^2)` and its gradient.
fn squared_error<T: Real>(scores: &Tensor<T>, label: f64, weight: f64) -> Result<LossGrad<T>> {
    check_finite(scores, "discriminator scores")?;
    if scores.is_empty() {
        return Err(shape_err("empty score map"));
    }
    let label = T::from_f64(label);
    let w = T::from_f64(weight);
    let n = T::from_f64(scores.len() as f64);
    let value = w * scores.data().iter().map(|&s| (s - label) * (s - label)).sum::<T>() / n;
    let two = T::from_f64(2.0);
    let grad = scores.map(|s| two * w * (s - label) / n);
    Ok(LossGrad { value, grad })
}

/// Generator adversarial loss: `lambda3 * mean((D(G(x)) - R)^2)`.
pub fn gan_loss<T: Real>(d_on_fake: &Tensor<T>, real_label: f64, lambda3: f64) -> Result<T> {
    Ok(gan_loss_with_grad(d_on_fake, real_label, lambda3)?.value)
}

pub fn gan_loss_with_grad<T: Real>(d_on_fake: &Tensor<T>, real_label: f64, lambda3: f64) -> Result<LossGrad<T>> {
    squared_error(d_on_fake, real_label, lambda3)
}

/// Discriminator loss: `lambda1 * mean((D(t) - R)^2) + lambda2 * mean((D(G(x)) - F)^2)`.
pub fn adversarial_loss<T: Real>(
    d_on_real: &Tensor<T>,
    d_on_fake: &Tensor<T>,
    labels: LabelConvention,
    lambda1: f64,
    lambda2: f64,
) -> Result<T> {
    let (v, _, _) = adversarial_loss_with_grad(d_on_real, d_on_fake, labels, lambda1, lambda2)?;
    Ok(v)
}

/// Returns `(value, grad wrt real scores, grad wrt fake scores)`.
pub fn adversarial_loss_with_grad<T: Real>(
    d_on_real: &Tensor<T>,
    d_on_fake: &Tensor<T>,
    labels: LabelConvention,
    lambda1: f64,
    lambda2: f64,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    let real = squared_error(d_on_real, labels.real_label, lambda1)?;
    let fake = squared_error(d_on_fake, labels.fake_label, lambda2)?;
    Ok((real.value + fake.value, real.grad, fake.grad))
}

/// Identity loss: `lambda4 * mean(|generated - target|)`.
pub fn identity_loss<T: Real>(generated: &Tensor<T>, target: &Tensor<T>, lambda4: f64) -> Result<T> {
    Ok(identity_loss_with_grad(generated, target, lambda4)?.value)
}

/// The gradient is `lambda4 * sign(generated - target) / count`, zero at ties.
pub fn identity_loss_with_grad<T: Real>(generated: &Tensor<T>, target: &Tensor<T>, lambda4: f64) -> Result<LossGrad<T>> {
    if generated.shape() != target.shape() {
        return Err(shape_err(format!(
            "identity loss shapes differ: {:?} vs {:?}",
            generated.shape(),
            target.shape()
        )));
    }
    check_finite(generated, "generated image")?;
    check_finite(target, "target image")?;
    let n = T::from_f64(generated.len() as f64);
    let w = T::from_f64(lambda4);
    let value = w * generated.data().iter().zip(target.data()).map(|(&g, &t)| (g - t).abs()).sum::<T>() / n;
    let mut grad = generated.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        *g = if diff > T::zero() {
            w / n
        } else if diff < T::zero() {
            -w / n
        } else {
            T::zero()
        };
    }
    Ok(LossGrad { value, grad })
}

/// Per-term generator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorObjective<T> {
    pub gan: T,
    pub identity: T,
}

impl<T: Real> GeneratorObjective<T> {
    pub fn total(&self) -> T {
        self.gan + self.identity
    }
}

/// `gan_loss + identity_loss`.
pub fn generator_objective<T: Real>(
    d_on_fake: &Tensor<T>,
    generated: &Tensor<T>,
    target: &Tensor<T>,
    weights: &LossWeights,
    labels: &LabelConvention,
) -> Result<GeneratorObjective<T>> {
    Ok(GeneratorObjective {
        gan: gan_loss(d_on_fake, labels.real_label, weights.lambda3)?,
        identity: identity_loss(generated, target, weights.lambda4)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(shape: &[usize], v: f64) -> Tensor<f64> {
        Tensor::full(shape, v)
    }

    #[test]
    fn gan_loss_examples() {
        assert_eq!(gan_loss(&constant(&[2, 1, 3, 3], 1.0), 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(gan_loss(&constant(&[2, 1, 3, 3], 0.0), 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(gan_loss(&constant(&[2, 1, 3, 3], 0.5), 1.0, 2.0).unwrap(), 0.5);
    }

    #[test]
    fn adversarial_loss_examples() {
        let labels = LabelConvention::default();
        let s = [1, 1, 3, 3];
        assert_eq!(adversarial_loss(&constant(&s, 1.0), &constant(&s, 0.0), labels, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(adversarial_loss(&constant(&s, 0.5), &constant(&s, 0.5), labels, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(adversarial_loss(&constant(&s, 0.0), &constant(&s, 1.0), labels, 0.5, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn identity_loss_examples() {
        let s = [1, 3, 4, 4];
        let t = Tensor::<f64>::from_vec(&s, (0..48).map(|v| v as f64 / 48.0).collect()).unwrap();
        assert_eq!(identity_loss(&t, &t, 10.0).unwrap(), 0.0);
        assert_eq!(identity_loss(&constant(&s, 0.0), &constant(&s, 1.0), 1.0).unwrap(), 1.0);
        assert_eq!(identity_loss(&constant(&s, -1.0), &constant(&s, 1.0), 10.0).unwrap(), 20.0);
        assert!(identity_loss(&constant(&s, 0.0), &constant(&[1, 3, 4, 3], 0.0), 1.0).is_err());
    }

    #[test]
    fn generator_objective_sums_terms() {
        let s = [1, 1, 2, 2];
        let img = [1, 3, 2, 2];
        let w = LossWeights { lambda3: 2.0, lambda4: 1.0, ..LossWeights::default() };
        // gan 2 * 0.25 = 0.5; identity mean |0 - 2| = 2
        let obj = generator_objective(&constant(&s, 0.5), &constant(&img, 0.0), &constant(&img, 2.0), &w, &LabelConvention::default()).unwrap();
        assert_eq!(obj.gan, 0.5);
        assert_eq!(obj.identity, 2.0);
        assert_eq!(obj.total(), 2.5);
        let zero = generator_objective(&constant(&s, 1.0), &constant(&img, 0.3), &constant(&img, 0.3), &w, &LabelConvention::default()).unwrap();
        assert_eq!(zero.total(), 0.0);
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        assert!(gan_loss(&constant(&[1, 1, 2, 2], f64::NAN), 1.0, 1.0).is_err());
    }

    #[test]
    fn identity_gradient_matches_finite_differences() {
        let g = Tensor::<f64>::from_vec(&[1, 1, 2, 3], vec![0.3, -0.2, 0.9, -0.7, 0.1, 0.5]).unwrap();
        let t = Tensor::<f64>::from_vec(&[1, 1, 2, 3], vec![0.1, 0.4, -0.3, -0.6, 0.8, 0.0]).unwrap();
        let analytic = identity_loss_with_grad(&g, &t, 10.0).unwrap().grad;
        let h = 1e-6;
        for i in 0..g.len() {
            let mut p = g.clone();
            p.data_mut()[i] += h;
            let mut m = g.clone();
            m.data_mut()[i] -= h;
            let fd = (identity_loss(&p, &t, 10.0).unwrap() - identity_loss(&m, &t, 10.0).unwrap()) / (2.0 * h);
            assert!((fd - analytic.data()[i]).abs() < 1e-6);
            let want = 10.0 * (g.data()[i] - t.data()[i]).signum() / 6.0;
            assert!((analytic.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_gradient_is_sum_of_term_gradients() {
        // d/dgenerated of (gan(D) + id(generated)) where D is a fixed linear
        // function of generated: D = mean of generated broadcast to one score.
        let g = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.3, -0.2, 0.9, -0.7]).unwrap();
        let t = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![0.1, 0.4, -0.3, -0.6]).unwrap();
        let w = LossWeights::default();
        let total = |x: &Tensor<f64>| {
            let score = Tensor::full(&[1, 1, 1, 1], x.mean());
            generator_objective(&score, x, &t, &w, &LabelConvention::default()).unwrap().total()
        };
        let score = Tensor::full(&[1, 1, 1, 1], g.mean());
        let dgan = gan_loss_with_grad(&score, 1.0, w.lambda3).unwrap().grad.data()[0] / 4.0;
        let did = identity_loss_with_grad(&g, &t, w.lambda4).unwrap().grad;
        let h = 1e-6;
        for i in 0..4 {
            let mut p = g.clone();
            p.data_mut()[i] += h;
            let mut m = g.clone();
            m.data_mut()[i] -= h;
            let fd = (total(&p) - total(&m)) / (2.0 * h);
            assert!((fd - (dgan + did.data()[i])).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn losses_are_non_negative_and_scale_linearly(
            values in prop::collection::vec(-3.0f64..3.0, 8),
            c in 0.0f64..5.0,
        ) {
            let s = Tensor::from_vec(&[2, 1, 2, 2], values.clone()).unwrap();
            let t = Tensor::from_vec(&[2, 1, 2, 2], values.iter().rev().cloned().collect()).unwrap();
            let base = gan_loss(&s, 1.0, 1.0).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((gan_loss(&s, 1.0, c).unwrap() - c * base).abs() <= 1e-12 * (1.0 + c * base));
            let id = identity_loss(&s, &t, 1.0).unwrap();
            prop_assert!(id >= 0.0);
            prop_assert!((identity_loss(&s, &t, c).unwrap() - c * id).abs() <= 1e-12 * (1.0 + c * id));
            let adv = adversarial_loss(&s, &t, LabelConvention::default(), c, c).unwrap();
            prop_assert!(adv >= 0.0);
        }

        #[test]
        fn mean_reduction_is_batch_size_invariant(v in -2.0f64..2.0, n in 1usize..6) {
            let one = gan_loss(&Tensor::full(&[1, 1, 3, 3], v), 1.0, 1.0).unwrap();
            let many = gan_loss(&Tensor::full(&[n, 1, 3, 3], v), 1.0, 1.0).unwrap();
            prop_assert!((one - many).abs() < 1e-12);
        }
    }
}
