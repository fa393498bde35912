use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient through ReLU given the forward output.
pub fn relu_backward<T: Real>(output: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

/// Gradient through LeakyReLU given the forward input.
pub fn leaky_relu_backward<T: Real>(input: &Tensor<T>, dy: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g *= slope;
        }
    }
    dx
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient through tanh given the forward output.
pub fn tanh_backward<T: Real>(output: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        *g *= T::one() - y * y;
    }
    dx
}
