//! Adam over a [`Module`]'s parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Module, Slot};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Real> {
    pub name: String,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    pub steps: u64,
    /// One entry per parameter in visit order; empty until the first step.
    pub moments: Vec<Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, steps: 0, moments: Vec::new() }
    }

    /// Zero moments for every parameter of `module`.
    pub fn init_for(&mut self, module: &dyn Module<T>) {
        self.moments.clear();
        module.visit("", &mut |name, t| {
            if !name.ends_with(".u") {
                self.moments.push(Moments { name: name.to_string(), m: Tensor::zeros(t.shape()), v: Tensor::zeros(t.shape()) });
            }
        });
    }

    /// Applies one update from the gradients accumulated in `module`.
    pub fn step(&mut self, module: &mut dyn Module<T>) -> Result<()> {
        if self.moments.is_empty() {
            self.init_for(module);
        }
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let step_size = T::from_f64(c.lr / (1.0 - c.beta1.powi(t)));
        let v_scale = T::from_f64(1.0 / (1.0 - c.beta2.powi(t)));
        let eps = T::from_f64(c.eps);
        let mut idx = 0;
        let mut mismatch = None;
        let moments = &mut self.moments;
        module.visit_mut("", &mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            let Some(state) = moments.get_mut(idx) else {
                mismatch.get_or_insert_with(|| name.to_string());
                return;
            };
            idx += 1;
            if state.name != name || state.m.shape() != p.value.shape() {
                mismatch.get_or_insert_with(|| name.to_string());
                return;
            }
            let (m, v) = (state.m.data_mut(), state.v.data_mut());
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(p.grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *w -= step_size * *m / ((*v * v_scale).sqrt() + eps);
            }
        });
        match mismatch {
            Some(name) => Err(Error::InvalidParameter(format!("optimizer state does not match parameter {name}"))),
            None if idx != moments.len() => Err(Error::InvalidParameter("optimizer state has extra entries".into())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{join, Param};

    struct Quadratic {
        w: Param<f64>,
    }

    impl Module<f64> for Quadratic {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
            f(&join(prefix, "w"), &self.w.value);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, f64>)) {
            f(&join(prefix, "w"), Slot::Param(&mut self.w));
        }
        fn advance_spectral(&mut self) {}
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut q = Quadratic { w: Param::new(Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap()) };
        q.w.grad = Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        adam.step(&mut q).unwrap();
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((q.w.value.data()[0] - 0.9).abs() < 1e-7);
        assert!((q.w.value.data()[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut q = Quadratic { w: Param::new(Tensor::from_vec(&[3], vec![2.0, -3.0, 0.5]).unwrap()) };
        let mut adam = Adam::new(AdamConfig { lr: 0.05, beta1: 0.9, ..Default::default() });
        for _ in 0..2000 {
            let g: Vec<f64> = q.w.value.data().iter().map(|&w| 2.0 * w).collect();
            q.w.grad = Tensor::from_vec(&[3], g).unwrap();
            adam.step(&mut q).unwrap();
        }
        assert!(q.w.value.data().iter().all(|w| w.abs() < 1e-2), "{:?}", q.w.value.data());
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut q = Quadratic { w: Param::zeros(&[2]) };
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        adam.moments.push(Moments { name: "other".into(), m: Tensor::zeros(&[2]), v: Tensor::zeros(&[2]) });
        assert!(adam.step(&mut q).is_err());
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}
