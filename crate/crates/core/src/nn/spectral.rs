//! Spectral normalization by power iteration.
//!
//! A kernel of shape `(out, ...)` is viewed as an `out x rest` matrix `M`. The
//! persistent left vector `u` is refined by `v = M^T u / |M^T u|`,
//! `u = M v / |M v|`; the largest singular value is then estimated as
//! `sigma = u^T M v` and the kernel is divided by `max(sigma, eps)`.
//!
//! Forward passes never move `u`. Training calls [`SpectralState::power_iterate`]
//! once per update, so a frozen network is a pure function of its inputs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{dot, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<T: Real = f32> {
    /// Unit-norm left singular vector estimate, one entry per output channel.
    pub u: Tensor<T>,
    pub iterations_per_step: usize,
    pub eps: T,
}

/// Quantities from one normalization, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct SpectralFactors<T: Real> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    /// Raw estimate `u^T M v`.
    pub sigma: T,
    /// `max(sigma, eps)`, the divisor actually applied.
    pub divisor: T,
}

fn normalize<T: Real>(x: &mut [T], eps: T) -> T {
    let norm = dot(x, x).sqrt();
    let d = norm.max(eps);
    x.iter_mut().for_each(|a| *a = *a / d);
    norm
}

fn mat_t_vec<T: Real>(m: &[T], rows: usize, cols: usize, u: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for (row, &ui) in m.chunks_exact(cols).zip(u).take(rows) {
        for (o, &mij) in out.iter_mut().zip(row) {
            *o += ui * mij;
        }
    }
    out
}

fn mat_vec<T: Real>(m: &[T], cols: usize, v: &[T]) -> Vec<T> {
    m.chunks_exact(cols).map(|row| dot(row, v)).collect()
}

fn matrix_dims<T: Real>(weight: &Tensor<T>) -> (usize, usize) {
    let rows = weight.shape()[0];
    (rows, weight.len() / rows.max(1))
}

impl<T: Real> SpectralState<T> {
    pub fn new<R: Rng + ?Sized>(out_channels: usize, rng: &mut R) -> Self {
        let mut u = Tensor::randn(&[out_channels], 1.0, rng);
        let eps = T::from_f64(1e-12);
        if normalize(u.data_mut(), eps) <= eps {
            u.data_mut()[0] = T::one();
        }
        Self { u, iterations_per_step: 1, eps }
    }

    /// Moves `u` towards the top left singular vector of the reshaped kernel.
    ///
    /// A degenerate step (`|M v|` below eps) leaves `u` unchanged, keeping it
    /// unit-norm for all-zero kernels.
    pub fn power_iterate(&mut self, weight: &Tensor<T>) -> Result<()> {
        self.check(weight)?;
        let (rows, cols) = matrix_dims(weight);
        let m = weight.data();
        for _ in 0..self.iterations_per_step {
            let mut v = mat_t_vec(m, rows, cols, self.u.data());
            normalize(&mut v, self.eps);
            let mut u = mat_vec(m, cols, &v);
            if normalize(&mut u, self.eps) > self.eps {
                self.u.data_mut().copy_from_slice(&u);
            }
        }
        Ok(())
    }

    /// Singular value estimate for the current `u`, which stays untouched.
    pub fn factors(&self, weight: &Tensor<T>) -> Result<SpectralFactors<T>> {
        self.check(weight)?;
        let (rows, cols) = matrix_dims(weight);
        let m = weight.data();
        let u = self.u.data().to_vec();
        let mut v = mat_t_vec(m, rows, cols, &u);
        normalize(&mut v, self.eps);
        let mv = mat_vec(m, cols, &v);
        let sigma = dot(&u, &mv);
        Ok(SpectralFactors { u, v, sigma, divisor: sigma.max(self.eps) })
    }

    /// Divides the kernel by the current singular value estimate without
    /// touching `u`.
    pub fn normalized(&self, weight: &Tensor<T>) -> Result<(Tensor<T>, SpectralFactors<T>)> {
        let f = self.factors(weight)?;
        Ok((weight.map(|w| w / f.divisor), f))
    }

    fn check(&self, weight: &Tensor<T>) -> Result<()> {
        if weight.shape().first() != Some(&self.u.len()) {
            return Err(Error::InvalidParameter(format!(
                "spectral state has {} rows, kernel shape is {:?}",
                self.u.len(),
                weight.shape()
            )));
        }
        if !weight.is_finite() {
            return Err(Error::InvalidParameter("non-finite kernel entries".into()));
        }
        Ok(())
    }
}

/// Accumulates the raw-kernel gradient into `grad`, given `scaled = G / s`
/// where `G` is the gradient with respect to the normalized kernel `W / s`.
/// With `u` and `v` held fixed, `dW = G / s - (<G, W> / s^2) u v^T`.
pub(crate) fn spectral_backward_into<T: Real>(weight: &[T], scaled: &[T], f: &SpectralFactors<T>, grad: &mut [T]) {
    let s = f.divisor;
    // below the eps clamp the divisor is a constant
    let coef = if f.sigma < s { T::zero() } else { dot(scaled, weight) / s };
    let cols = f.v.len();
    let rows = grad.chunks_exact_mut(cols).zip(scaled.chunks_exact(cols));
    for ((grow, srow), &ui) in rows.zip(&f.u) {
        let cu = coef * ui;
        for ((gr, &sc), &vj) in grow.iter_mut().zip(srow).zip(&f.v) {
            *gr += sc - cu * vj;
        }
    }
}

/// One training-mode normalization: advance `state` by its configured number
/// of power iterations, then return `kernel / max(sigma, eps)`.
pub fn spectral_normalize<T: Real>(kernel: &Tensor<T>, state: &mut SpectralState<T>) -> Result<Tensor<T>> {
    state.power_iterate(kernel)?;
    Ok(state.normalized(kernel)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kernel(rows: usize, data: Vec<f64>) -> Tensor<f64> {
        let cols = data.len() / rows;
        Tensor::from_vec(&[rows, cols, 1, 1], data).unwrap()
    }

    #[test]
    fn diagonal_kernel_with_converged_u() {
        let w = kernel(2, vec![3.0, 0.0, 0.0, 1.0]);
        let mut state = SpectralState::<f64> {
            u: Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap(),
            iterations_per_step: 1,
            eps: 1e-12,
        };
        let out = spectral_normalize(&w, &mut state).unwrap();
        let want = [1.0, 0.0, 0.0, 1.0 / 3.0];
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_kernel_is_unchanged() {
        let w = kernel(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut state = SpectralState::<f64>::new(3, &mut ChaCha8Rng::seed_from_u64(1));
        let out = spectral_normalize(&w, &mut state).unwrap();
        for (a, b) in out.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_kernel_stays_zero_and_u_stays_unit() {
        let w = Tensor::<f64>::zeros(&[4, 2, 3, 3]);
        let mut state = SpectralState::<f64>::new(4, &mut ChaCha8Rng::seed_from_u64(2));
        let out = spectral_normalize(&w, &mut state).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let norm: f64 = state.u.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_kernel_is_rejected() {
        let w = kernel(2, vec![f64::NAN, 0.0, 0.0, 1.0]);
        let mut state = SpectralState::<f64>::new(2, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(matches!(spectral_normalize(&w, &mut state), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn u_stays_unit_norm_across_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Tensor::<f32>::randn(&[6, 3, 3, 3], 0.5, &mut rng);
        let mut state = SpectralState::<f32>::new(6, &mut rng);
        for _ in 0..10 {
            state.power_iterate(&w).unwrap();
            let norm: f32 = state.u.data().iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }
}
