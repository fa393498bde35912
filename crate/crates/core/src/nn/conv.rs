//! 2-D convolution and transposed convolution via im2col + gemm.

use rand::Rng;

use super::spectral::{spectral_backward_into, SpectralFactors, SpectralState};
use super::{join, Module, Param, Slot};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm, MatView, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_height: usize,
    out_width: usize,
}

impl Geometry {
    fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let span = |n: usize| -> Result<usize> {
            let padded = n + 2 * padding;
            if padded < kernel {
                return Err(shape_err(format!(
                    "input side {n} (padding {padding}) smaller than kernel {kernel}"
                )));
            }
            Ok((padded - kernel) / stride + 1)
        };
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height: span(height)?,
            out_width: span(width)?,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `lo..hi` whose tap `kj` lands inside a row of width `w`.
fn valid_span(kj: usize, g: &Geometry) -> (usize, usize) {
    let (s, p) = (g.stride as isize, g.padding as isize);
    let shift = kj as isize - p;
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    let hi = ((g.width as isize - 1 - shift).div_euclid(s) + 1).clamp(0, g.out_width as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

/// Adjoint of [`batch_im2col`] for one sample: scatter-adds its columns
/// (starting at `offset`, leading dimension `ld`) back into an image.
fn col2im<T: Real>(cols: &[T], g: &Geometry, x: &mut [T], ld: usize, offset: usize) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let (oh, ow) = (g.out_height, g.out_width);
    let plane = oh * ow;
    for c in 0..g.channels {
        let dst = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_span(kj, g);
                if lo == hi {
                    continue;
                }
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ld + offset..row * ld + offset + plane];
                for oy in 0..oh {
                    let iy = (oy * s) as isize + ki as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let first = ((lo * s + kj) as isize - p) as usize;
                    let run = &src[oy * ow + lo..oy * ow + hi];
                    if s == 1 {
                        for (d, &v) in dst_row[first..first + run.len()].iter_mut().zip(run) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst_row[first..].iter_mut().step_by(s).zip(run) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Patch matrix for a whole batch: `C*k*k` rows, `n * OH*OW` columns.
/// Written in one sequential pass, row by row.
fn batch_im2col<T: Real>(x: &[T], n: usize, g: &Geometry) -> Vec<T> {
    if g.is_pointwise() {
        return nchw_to_channel_major(x, n, g.channels, g.positions());
    }
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let (oh, ow) = (g.out_height, g.out_width);
    let in_plane = g.height * g.width;
    let mut cols = Vec::with_capacity(g.rows() * n * g.positions());
    for c in 0..g.channels {
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_span(kj, g);
                let first = ((lo * s + kj) as isize - p).max(0) as usize;
                for b in 0..n {
                    let src = &x[(b * g.channels + c) * in_plane..(b * g.channels + c + 1) * in_plane];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ki as isize - p;
                        if iy < 0 || iy >= g.height as isize || lo == hi {
                            cols.resize(cols.len() + ow, T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                        cols.resize(cols.len() + lo, T::zero());
                        if s == 1 {
                            cols.extend_from_slice(&src_row[first..first + hi - lo]);
                        } else {
                            cols.extend(src_row[first..].iter().step_by(s).take(hi - lo));
                        }
                        cols.resize(cols.len() + ow - hi, T::zero());
                    }
                }
            }
        }
    }
    cols
}

fn batch_col2im<T: Real>(cols: &[T], n: usize, g: &Geometry) -> Vec<T> {
    if g.is_pointwise() {
        return channel_major_to_nchw(cols, n, g.channels, g.positions());
    }
    let ld = n * g.positions();
    let in_len = g.channels * g.height * g.width;
    let mut x = vec![T::zero(); n * in_len];
    for b in 0..n {
        col2im(cols, g, &mut x[b * in_len..(b + 1) * in_len], ld, b * g.positions());
    }
    x
}

/// `(n, c, p)` to `(c, n * p)`.
fn nchw_to_channel_major<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        for b in 0..n {
            out.extend_from_slice(&x[(b * c + ch) * p..(b * c + ch + 1) * p]);
        }
    }
    out
}

/// `(c, n * p)` to `(n, c, p)`.
fn channel_major_to_nchw<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for b in 0..n {
        for ch in 0..c {
            out.extend_from_slice(&x[ch * n * p + b * p..ch * n * p + (b + 1) * p]);
        }
    }
    out
}

/// `(out, in, k, k)` to `(in, out, k, k)` with both spatial axes reversed.
fn flip_kernel<T: Real>(w: &[T], out_ch: usize, in_ch: usize, k: usize) -> Vec<T> {
    let kk = k * k;
    let mut f = Vec::with_capacity(w.len());
    for i in 0..in_ch {
        for o in 0..out_ch {
            let src = &w[(o * in_ch + i) * kk..(o * in_ch + i + 1) * kk];
            f.extend(src.iter().rev());
        }
    }
    f
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_exact_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], dy: &[T], plane: usize) {
    let ch = grad.len();
    for (i, chunk) in dy.chunks_exact(plane).enumerate() {
        grad[i % ch] += crate::tensor::sum(chunk);
    }
}

/// Convolution with square kernels and optional spectral normalization of the
/// weight. Weight layout is `(out, in, k, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T: Real = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
    pub spectral: Option<SpectralState<T>>,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T: Real> {
    input_shape: Vec<usize>,
    /// Patch matrix of the input, reused for the weight gradient.
    cols: Vec<T>,
    factors: Option<SpectralFactors<T>>,
}

impl<T: Real> ConvCache<T> {
    /// Factor applied to the raw weight inside every gemm.
    fn scale(&self) -> T {
        self.factors.as_ref().map_or(T::one(), |f| T::one() / f.divisor)
    }
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        spectral: bool,
        rng: &mut R,
    ) -> Self {
        let weight = Param::gaussian(&[out_ch, in_ch, kernel, kernel], rng);
        let spectral = spectral.then(|| SpectralState::new(out_ch, rng));
        Self { weight, bias: Param::zeros(&[out_ch]), stride, padding, spectral }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, Geometry)> {
        self.geometry_of(x.shape())
    }

    fn geometry_of(&self, shape: &[usize]) -> Result<(usize, Geometry)> {
        let &[n, c, h, w] = shape else {
            return Err(shape_err(format!("expected a 4-d tensor, got shape {shape:?}")));
        };
        if c != self.in_channels() {
            return Err(shape_err(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        Ok((n, Geometry::new(c, h, w, self.kernel(), self.stride, self.padding)?))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (n, g) = self.geometry(x)?;
        let factors = self.spectral.as_ref().map(|s| s.factors(&self.weight.value)).transpose()?;
        let scale = factors.as_ref().map_or(T::one(), |f| T::one() / f.divisor);
        let weight = &self.weight.value;
        let out_ch = self.out_channels();
        let plane = g.positions();
        let cols = batch_im2col(x.data(), n, &g);
        let mut ycm = vec![T::zero(); out_ch * n * plane];
        gemm(
            scale,
            weight.data(),
            MatView::row_major(out_ch, g.rows()),
            &cols,
            MatView::row_major(g.rows(), n * plane),
            T::zero(),
            &mut ycm,
            MatView::row_major(out_ch, n * plane),
        );
        let mut out = Tensor::from_vec(&[n, out_ch, g.out_height, g.out_width], channel_major_to_nchw(&ycm, n, out_ch, plane))?;
        add_bias(out.data_mut(), self.bias.value.data(), plane);
        Ok((out, ConvCache { input_shape: x.shape().to_vec(), cols, factors }))
    }

    fn check_dy(&self, cache: &ConvCache<T>, dy: &Tensor<T>) -> Result<(usize, Geometry)> {
        let (n, g) = self.geometry_of(&cache.input_shape)?;
        if dy.shape() != [n, self.out_channels(), g.out_height, g.out_width] {
            return Err(shape_err(format!("conv backward: gradient shape {:?}", dy.shape())));
        }
        Ok((n, g))
    }

    /// Input gradient. Stride-1 convolutions that narrow the channel count
    /// correlate `dy` with the flipped kernel, which keeps the patch matrix
    /// small; the rest go through `W^T dy` and [`col2im`].
    fn input_grad_from(&self, cache: &ConvCache<T>, dy: &Tensor<T>, dycm: &[T], n: usize, g: &Geometry) -> Result<Tensor<T>> {
        let (weight, scale) = (&self.weight.value, cache.scale());
        let (out_ch, in_ch, k) = (self.out_channels(), self.in_channels(), self.kernel());
        if self.stride == 1 && self.padding < k && out_ch < in_ch && !g.is_pointwise() {
            let gd = Geometry::new(out_ch, g.out_height, g.out_width, k, 1, k - 1 - self.padding)?;
            debug_assert_eq!((gd.out_height, gd.out_width), (g.height, g.width));
            let cols = batch_im2col(dy.data(), n, &gd);
            let flipped = flip_kernel(weight.data(), out_ch, in_ch, k);
            let positions = g.height * g.width;
            let mut dxcm = vec![T::zero(); in_ch * n * positions];
            gemm(
                scale,
                &flipped,
                MatView::row_major(in_ch, gd.rows()),
                &cols,
                MatView::row_major(gd.rows(), n * positions),
                T::zero(),
                &mut dxcm,
                MatView::row_major(in_ch, n * positions),
            );
            return Tensor::from_vec(&cache.input_shape, channel_major_to_nchw(&dxcm, n, in_ch, positions));
        }
        let plane = g.positions();
        let mut dcols = vec![T::zero(); g.rows() * n * plane];
        gemm(
            scale,
            weight.data(),
            MatView::row_major(out_ch, g.rows()).t(),
            dycm,
            MatView::row_major(out_ch, n * plane),
            T::zero(),
            &mut dcols,
            MatView::row_major(g.rows(), n * plane),
        );
        Tensor::from_vec(&cache.input_shape, batch_col2im(&dcols, n, g))
    }

    /// Input gradient only; parameter gradients are left alone.
    pub fn input_grad(&self, cache: &ConvCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, g) = self.check_dy(cache, dy)?;
        let dycm = nchw_to_channel_major(dy.data(), n, self.out_channels(), g.positions());
        self.input_grad_from(cache, dy, &dycm, n, &g)
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (n, g) = self.check_dy(cache, dy)?;
        let out_ch = self.out_channels();
        let plane = g.positions();
        accumulate_bias_grad(self.bias.grad.data_mut(), dy.data(), plane);
        let dycm = nchw_to_channel_major(dy.data(), n, out_ch, plane);
        // dW (out x rows) = dY (out x nP) * cols^T (nP x rows), scaled like the weight
        let dw_gemm = |beta: T, into: &mut [T]| {
            gemm(
                cache.scale(),
                &dycm,
                MatView::row_major(out_ch, n * plane),
                &cache.cols,
                MatView::row_major(g.rows(), n * plane).t(),
                beta,
                into,
                MatView::row_major(out_ch, g.rows()),
            )
        };
        match &cache.factors {
            Some(f) => {
                let mut scaled = vec![T::zero(); self.weight.value.len()];
                dw_gemm(T::zero(), &mut scaled);
                spectral_backward_into(self.weight.value.data(), &scaled, f, self.weight.grad.data_mut());
            }
            None => dw_gemm(T::one(), self.weight.grad.data_mut()),
        }
        let dx = if need_input_grad { Some(self.input_grad_from(cache, dy, &dycm, n, &g)?) } else { None };
        Ok(dx)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight.value);
        f(&join(prefix, "bias"), &self.bias.value);
        if let Some(s) = &self.spectral {
            f(&join(prefix, "u"), &s.u);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
        if let Some(s) = &mut self.spectral {
            f(&join(prefix, "u"), Slot::Buffer(&mut s.u));
        }
    }

    fn advance_spectral(&mut self) {
        if let Some(s) = &mut self.spectral {
            // non-finite weights leave u untouched; the next forward reports them
            let _ = s.power_iterate(&self.weight.value);
        }
    }
}

/// Transposed convolution. Weight layout is `(in, out, k, k)`; the output
/// side is `(in_side - 1) * stride - 2 * padding + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T: Real = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvTransposeCache<T: Real> {
    input: Tensor<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::gaussian(&[in_ch, out_ch, kernel, kernel], rng),
            bias: Param::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// Geometry of the equivalent forward convolution that maps the output
    /// back onto the input grid.
    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, Geometry)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(shape_err(format!(
                "transposed conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let k = self.weight.value.shape()[2];
        let side = |s: usize| -> Result<usize> {
            ((s - 1) * self.stride + k)
                .checked_sub(2 * self.padding)
                .filter(|&v| v > 0)
                .ok_or_else(|| shape_err("transposed conv output would be empty"))
        };
        let g = Geometry::new(self.out_channels(), side(h)?, side(w)?, k, self.stride, self.padding)?;
        debug_assert_eq!((g.out_height, g.out_width), (h, w));
        Ok((n, g))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvTransposeCache<T>)> {
        let (n, g) = self.geometry(x)?;
        let in_ch = self.in_channels();
        let positions = g.positions();
        let xcm = nchw_to_channel_major(x.data(), n, in_ch, positions);
        let mut cols = vec![T::zero(); g.rows() * n * positions];
        // cols (rows x nP) = W^T (rows x in) * x (in x nP)
        gemm(
            T::one(),
            self.weight.value.data(),
            MatView::row_major(in_ch, g.rows()).t(),
            &xcm,
            MatView::row_major(in_ch, n * positions),
            T::zero(),
            &mut cols,
            MatView::row_major(g.rows(), n * positions),
        );
        let mut out = Tensor::from_vec(&[n, g.channels, g.height, g.width], batch_col2im(&cols, n, &g))?;
        add_bias(out.data_mut(), self.bias.value.data(), g.height * g.width);
        Ok((out, ConvTransposeCache { input: x.clone() }))
    }

    pub fn backward(&mut self, cache: &ConvTransposeCache<T>, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = &cache.input;
        let (n, g) = self.geometry(x)?;
        if dy.shape() != [n, g.channels, g.height, g.width] {
            return Err(shape_err(format!("transposed conv backward: gradient shape {:?}", dy.shape())));
        }
        let in_ch = self.in_channels();
        let positions = g.positions();
        accumulate_bias_grad(self.bias.grad.data_mut(), dy.data(), g.height * g.width);
        let dcols = batch_im2col(dy.data(), n, &g);
        let xcm = nchw_to_channel_major(x.data(), n, in_ch, positions);
        // dW (in x rows) += x (in x nP) * dcols^T (nP x rows)
        gemm(
            T::one(),
            &xcm,
            MatView::row_major(in_ch, n * positions),
            &dcols,
            MatView::row_major(g.rows(), n * positions).t(),
            T::one(),
            self.weight.grad.data_mut(),
            MatView::row_major(in_ch, g.rows()),
        );
        let dx = if need_input_grad {
            let mut dxcm = vec![T::zero(); in_ch * n * positions];
            gemm(
                T::one(),
                self.weight.value.data(),
                MatView::row_major(in_ch, g.rows()),
                &dcols,
                MatView::row_major(g.rows(), n * positions),
                T::zero(),
                &mut dxcm,
                MatView::row_major(in_ch, n * positions),
            );
            Some(Tensor::from_vec(x.shape(), channel_major_to_nchw(&dxcm, n, in_ch, positions))?)
        } else {
            None
        };
        Ok(dx)
    }
}

impl<T: Real> Module<T> for ConvTranspose2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight.value);
        f(&join(prefix, "bias"), &self.bias.value);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }

    fn advance_spectral(&mut self) {}
}
