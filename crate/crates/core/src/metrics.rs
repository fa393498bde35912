//! SSIM, MSE and SNR on the 8-bit `[0, 255]` scale.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const RANGE: f64 = 255.0;

fn to_255(v: f32) -> f64 {
    (v as f64 + 1.0) * 127.5
}

/// Mean squared difference in 8-bit units.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (to_255(x) - to_255(y)).powi(2)).sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), valid positions
/// only, averaged over positions and then channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs sides of at least {SSIM_WINDOW}, got {h}x{w}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (K1 * RANGE).powi(2);
    let c2 = (K2 * RANGE).powi(2);
    let mut total = 0.0;
    for c in 0..a.channels {
        let x: Vec<f64> = a.channel(c).iter().map(|&v| to_255(v)).collect();
        let y: Vec<f64> = b.channel(c).iter().map(|&v| to_255(v)).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let mxx = filter_valid(&prod(&x, &x), h, w, &taps);
        let myy = filter_valid(&prod(&y, &y), h, w, &taps);
        let mxy = filter_valid(&prod(&x, &y), h, w, &taps);
        let n = mx.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / a.channels as f64)
}

/// Signal-to-noise ratio of `predicted` against `truth`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Snr {
    /// `sum(truth^2) / sum((truth - predicted)^2)`; infinite for a perfect match.
    pub linear: f64,
    pub db: f64,
}

pub fn snr(truth: &Image, predicted: &Image) -> Result<Snr> {
    truth.check_same_shape(predicted)?;
    let signal: f64 = truth.data.iter().map(|&v| to_255(v).powi(2)).sum();
    if signal == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    let noise: f64 = truth.data.iter().zip(&predicted.data).map(|(&a, &b)| (to_255(a) - to_255(b)).powi(2)).sum();
    if noise == 0.0 {
        return Ok(Snr { linear: f64::INFINITY, db: f64::INFINITY });
    }
    let linear = signal / noise;
    Ok(Snr { linear, db: 10.0 * linear.log10() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMetrics {
    pub ssim: f64,
    pub mse: f64,
    pub snr: Snr,
}

pub fn pair_metrics(truth: &Image, predicted: &Image) -> Result<PairMetrics> {
    Ok(PairMetrics { ssim: ssim(truth, predicted)?, mse: mse(truth, predicted)?, snr: snr(truth, predicted)? })
}

/// Means over a set of image pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ssim: f64,
    pub mse: f64,
    #[serde(with = "float_or_inf")]
    pub snr_db: f64,
    #[serde(with = "float_or_inf")]
    pub snr_linear: f64,
    pub count: usize,
}

impl MetricsReport {
    pub fn from_pairs(pairs: &[PairMetrics]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset("no image pairs to score".into()));
        }
        let n = pairs.len() as f64;
        let mean = |f: &dyn Fn(&PairMetrics) -> f64| pairs.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            ssim: mean(&|p| p.ssim),
            mse: mean(&|p| p.mse),
            snr_db: mean(&|p| p.snr.db),
            snr_linear: mean(&|p| p.snr.linear),
            count: pairs.len(),
        })
    }

    /// Scores `(truth, predicted)` pairs, in parallel when a pool is available.
    pub fn evaluate(pairs: &[(Image, Image)]) -> Result<Self> {
        let scored: Result<Vec<PairMetrics>> = pairs.par_iter().map(|(t, p)| pair_metrics(t, p)).collect();
        Self::from_pairs(&scored?)
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ssim={} mse={} snr_db={} n={}", fmt_value(self.ssim), fmt_value(self.mse), fmt_value(self.snr_db), self.count)
    }
}

/// JSON has no infinity; store it as the string `"inf"`.
mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else {
            Repr::Text(super::fmt_value(*v)).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}
