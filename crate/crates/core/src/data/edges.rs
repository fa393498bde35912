use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Condition, Image, Mask, Plane};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grayscale {
    /// Unweighted channel mean.
    #[default]
    Mean,
    /// Rec. 601 luma weights (three-channel images only).
    Luma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeConfig {
    /// Fraction of the largest gradient magnitude that counts as an edge.
    pub threshold: f32,
    /// Smooth with a 3x3 binomial kernel before differentiating.
    pub blur_before: bool,
    pub grayscale: Grayscale,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self { threshold: 0.25, blur_before: false, grayscale: Grayscale::Mean }
    }
}

impl EdgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("edge threshold must lie in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }
}

fn gray(image: &Image, mode: Grayscale) -> Vec<f32> {
    match mode {
        Grayscale::Luma if image.channels == 3 => {
            let (r, g, b) = (image.channel(0), image.channel(1), image.channel(2));
            (0..image.plane_len()).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect()
        }
        _ => image.grayscale(),
    }
}

/// Replicate-padded read.
fn at(data: &[f32], h: usize, w: usize, y: isize, x: isize) -> f32 {
    let y = y.clamp(0, h as isize - 1) as usize;
    let x = x.clamp(0, w as isize - 1) as usize;
    data[y * w + x]
}

fn blur3(data: &[f32], h: usize, w: usize) -> Vec<f32> {
    const K: [f32; 3] = [1.0, 2.0, 1.0];
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (i, ky) in K.iter().enumerate() {
                for (j, kx) in K.iter().enumerate() {
                    acc += ky * kx * at(data, h, w, y + i as isize - 1, x + j as isize - 1);
                }
            }
            out[y as usize * w + x as usize] = acc / 16.0;
        }
    }
    out
}

const SOBEL_X: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f32; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Raw Sobel gradient magnitude of a single plane with edge-replicate padding.
pub fn sobel_magnitude(data: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut gx, mut gy) = (0.0f32, 0.0f32);
            for i in 0..3 {
                for j in 0..3 {
                    let v = at(data, h, w, y + i as isize - 1, x + j as isize - 1);
                    gx += SOBEL_X[i][j] * v;
                    gy += SOBEL_Y[i][j] * v;
                }
            }
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

fn threshold_normalized(magnitude: &[f32], h: usize, w: usize, threshold: f32) -> Condition {
    let max = magnitude.iter().copied().fold(0.0f32, f32::max);
    let data = if max > 0.0 {
        magnitude.iter().map(|&m| if m / max >= threshold { 1.0 } else { 0.0 }).collect()
    } else {
        vec![0.0; h * w]
    };
    Condition(Plane { height: h, width: w, data })
}

fn prepared(image: &Image, cfg: &EdgeConfig) -> Vec<f32> {
    let g = gray(image, cfg.grayscale);
    if cfg.blur_before {
        blur3(&g, image.height, image.width)
    } else {
        g
    }
}

/// Binary edge map: Sobel magnitude divided by its maximum, then thresholded.
pub fn sobel_edge_map(image: &Image, cfg: &EdgeConfig) -> Condition {
    let (h, w) = (image.height, image.width);
    let mag = sobel_magnitude(&prepared(image, cfg), h, w);
    threshold_normalized(&mag, h, w, cfg.threshold)
}

/// Edge map computed from visible pixels only: any pixel whose 3x3
/// neighbourhood touches a hole gets zero gradient, so the hole boundary
/// itself never shows up as an edge.
pub fn sobel_edge_map_visible(image: &Image, mask: &Mask, cfg: &EdgeConfig) -> Result<Condition> {
    let (h, w) = (image.height, image.width);
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::Shape("mask and image sizes differ".into()));
    }
    let mut mag = sobel_magnitude(&prepared(image, cfg), h, w);
    let holes = &mask.0.data;
    let reach: isize = if cfg.blur_before { 2 } else { 1 };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let touches = (-reach..=reach)
                .any(|dy| (-reach..=reach).any(|dx| at(holes, h, w, y + dy, x + dx) != 0.0));
            if touches {
                mag[y as usize * w + x as usize] = 0.0;
            }
        }
    }
    Ok(threshold_normalized(&mag, h, w, cfg.threshold))
}
