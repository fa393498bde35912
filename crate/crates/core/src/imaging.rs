//! Image, mask and condition containers plus 8-bit conversions.
//!
//! Pixel values live in `[-1, 1]` in memory and in `0..=255` on disk.

use image::{GrayImage, RgbImage};

use crate::error::{shape_err, Result};

/// Planar (CHW) picture with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Maps an 8-bit level to `[-1, 1]`.
pub fn from_u8(v: u8) -> f32 {
    2.0 * v as f32 / 255.0 - 1.0
}

/// Maps `[-1, 1]` to the nearest 8-bit level, clamping out-of-range values.
pub fn to_u8(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round()) as u8
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.plane_len()..(c + 1) * self.plane_len()]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape_err(format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )))
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (x, y, p) in img.enumerate_pixels() {
            let idx = y as usize * w + x as usize;
            for c in 0..3 {
                data[c * w * h + idx] = from_u8(p[c]);
            }
        }
        Self { channels: 3, height: h, width: w, data }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let plane = self.plane_len();
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let idx = y as usize * self.width + x as usize;
            let px = |c: usize| to_u8(self.data[c.min(self.channels - 1) * plane + idx]);
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    /// Unweighted mean over channels.
    pub fn grayscale(&self) -> Vec<f32> {
        let plane = self.plane_len();
        (0..plane)
            .map(|i| (0..self.channels).map(|c| self.data[c * plane + i]).sum::<f32>() / self.channels as f32)
            .collect()
    }
}

/// Single-channel `H x W` map.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(format!("{height}x{width} plane needs {} values, got {}", height * width, data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![1.0; height * width] }
    }

    /// Binary plane from an 8-bit gray image: `value >= threshold` maps to 1.
    pub fn from_gray8(img: &GrayImage, threshold: u8) -> Self {
        let data = img.pixels().map(|p| if p[0] >= threshold { 1.0 } else { 0.0 }).collect();
        Self { height: img.height() as usize, width: img.width() as usize, data }
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.data[y as usize * self.width + x as usize];
            image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
        })
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn mean(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len().max(1) as f32
    }
}

/// Binary damage map: 1 marks a hole, 0 a valid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(pub Plane);

/// Binary structure map: thresholded edges or sketch strokes.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition(pub Plane);

impl Mask {
    pub fn coverage(&self) -> f32 {
        self.0.mean()
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }
}

impl Condition {
    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }
}

/// Zeroes every hole pixel of `image` (`image * (1 - mask)`).
pub fn apply_mask(image: &Image, mask: &Mask) -> Result<Image> {
    if (image.height, image.width) != (mask.height(), mask.width()) {
        return Err(shape_err("mask and image sizes differ"));
    }
    let plane = image.plane_len();
    let mut out = image.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        if mask.0.data[i % plane] != 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// `mask * raw + (1 - mask) * original`, per channel. Valid pixels are copied
/// from `original` bit-exactly.
pub fn composite(raw: &Image, original: &Image, mask: &Mask) -> Result<Image> {
    raw.check_same_shape(original)?;
    if (raw.height, raw.width) != (mask.height(), mask.width()) {
        return Err(shape_err("mask and image sizes differ"));
    }
    let plane = raw.plane_len();
    let data = raw
        .data
        .iter()
        .zip(&original.data)
        .enumerate()
        .map(|(i, (&r, &o))| {
            let m = mask.0.data[i % plane];
            if m == 0.0 {
                o
            } else if m == 1.0 {
                r
            } else {
                m * r + (1.0 - m) * o
            }
        })
        .collect();
    Ok(Image { data, ..raw.clone() })
}
