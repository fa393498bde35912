//! Inpainting arbitrary-size 8-bit images with a frozen generator.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::{seeded_rng, sobel_edge_map_visible, EdgeConfig, NOISE_STREAM};
use crate::error::{Error, Result};
use crate::imaging::{apply_mask, Condition, Image, Mask, Plane};
use crate::model::{Generator, GeneratorConfig, GeneratorInputBundle};
use crate::trainer::{load_checkpoint, TrainState};

/// Mask and sketch pixels at or above this level are holes / strokes.
pub const BINARY_THRESHOLD: u8 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionSource {
    /// A user sketch was supplied.
    Sketch,
    /// No sketch; edges were taken from the visible pixels.
    Edge,
}

/// Summary of a loaded model, as reported by `GET /model`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub image_side: usize,
    pub step: u64,
    pub epoch: u64,
    pub ablate_condition: bool,
    pub generator: GeneratorConfig,
}

/// A generator that is never updated again, plus what inference needs from
/// its training config.
#[derive(Clone, Debug)]
pub struct FrozenModel {
    generator: Generator,
    edge: EdgeConfig,
    noise_channels: usize,
    ablate_condition: bool,
    info: ModelInfo,
}

#[derive(Clone, Debug)]
pub struct Inpainted {
    pub image: RgbImage,
    pub condition: ConditionSource,
}

impl FrozenModel {
    pub fn from_state(state: TrainState, model_id: String) -> Self {
        let cfg = state.config;
        let info = ModelInfo {
            model_id,
            image_side: cfg.generator.image_side,
            step: state.step,
            epoch: state.epoch,
            ablate_condition: cfg.ablate_condition,
            generator: cfg.generator.clone(),
        };
        Self {
            generator: state.generator,
            edge: cfg.edge,
            noise_channels: cfg.generator.noise_channels,
            ablate_condition: cfg.ablate_condition,
            info,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (state, id) = load_checkpoint(path)?;
        Ok(Self::from_state(state, id))
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn side(&self) -> usize {
        self.info.image_side
    }

    /// Fills the holes of `image`. The mask and optional sketch must match
    /// its size; they are binarized at [`BINARY_THRESHOLD`]. Inputs of any
    /// size are resized to the model side and the prediction is resized
    /// back, then pasted only into hole pixels so everything else is returned
    /// byte for byte.
    pub fn inpaint(&self, image: &RgbImage, mask: &GrayImage, sketch: Option<&GrayImage>, seed: u64) -> Result<Inpainted> {
        let dims = image.dimensions();
        if dims.0 == 0 || dims.1 == 0 {
            return Err(Error::Data("image is empty".into()));
        }
        if mask.dimensions() != dims {
            return Err(Error::Data(format!("mask is {:?} but image is {dims:?}", mask.dimensions())));
        }
        if let Some(s) = sketch {
            if s.dimensions() != dims {
                return Err(Error::Data(format!("sketch is {:?} but image is {dims:?}", s.dimensions())));
            }
        }
        let side = self.side() as u32;
        let small = Image::from_rgb8(&resize_rgb(image, side));
        // any partially covered pixel counts, so thin holes and strokes survive downsizing
        let small_mask = Mask(Plane::from_gray8(&resize_binary(mask, side), 1));
        let (condition, source) = match sketch {
            Some(s) => (Condition(Plane::from_gray8(&resize_binary(s, side), 1)), ConditionSource::Sketch),
            None => {
                let visible = apply_mask(&small, &small_mask)?;
                (sobel_edge_map_visible(&visible, &small_mask, &self.edge)?, ConditionSource::Edge)
            }
        };
        let condition = if self.ablate_condition { Condition(Plane::zeros(side as usize, side as usize)) } else { condition };
        let noise = GeneratorInputBundle::sample_noise(self.noise_channels, side as usize, &mut seeded_rng(seed, NOISE_STREAM));
        let bundle = GeneratorInputBundle::new(&small, small_mask, condition, noise)?;
        let raw = self.generator.infer(&[&bundle])?.remove(0);
        let raw = imageops::resize(&raw.to_rgb8(), dims.0, dims.1, FilterType::Triangle);
        let out = RgbImage::from_fn(dims.0, dims.1, |x, y| {
            if mask.get_pixel(x, y)[0] >= BINARY_THRESHOLD {
                *raw.get_pixel(x, y)
            } else {
                *image.get_pixel(x, y)
            }
        });
        Ok(Inpainted { image: out, condition: source })
    }
}

fn resize_rgb(img: &RgbImage, side: u32) -> RgbImage {
    if img.dimensions() == (side, side) {
        return img.clone();
    }
    imageops::resize(img, side, side, FilterType::Triangle)
}

/// Binarizes at [`BINARY_THRESHOLD`], then resizes so that any output pixel
/// touched by a set input pixel is nonzero.
fn resize_binary(img: &GrayImage, side: u32) -> GrayImage {
    let bin = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        image::Luma([if img.get_pixel(x, y)[0] >= BINARY_THRESHOLD { 255 } else { 0 }])
    });
    if bin.dimensions() == (side, side) {
        return bin;
    }
    imageops::resize(&bin, side, side, FilterType::Triangle)
}

/// Writes an RGB image as PNG bytes.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Pixels of `a` that differ from `b` outside the hole set of `mask`.
pub fn changed_outside_mask(a: &RgbImage, b: &RgbImage, mask: &GrayImage) -> usize {
    a.enumerate_pixels()
        .filter(|&(x, y, p)| mask.get_pixel(x, y)[0] < BINARY_THRESHOLD && p != b.get_pixel(x, y))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DiscriminatorConfig;
    use crate::trainer::TrainConfig;

    fn tiny_model() -> FrozenModel {
        let cfg = TrainConfig {
            generator: GeneratorConfig { image_side: 32, ..GeneratorConfig::miniature() },
            discriminator: DiscriminatorConfig::miniature(),
            ..Default::default()
        };
        FrozenModel::from_state(TrainState::new(cfg).unwrap(), "test".into())
    }

    fn face(w: u32, h: u32) -> RgbImage {
        let f = crate::data::synth_face(1, 64).to_rgb8();
        imageops::resize(&f, w, h, FilterType::Triangle)
    }

    fn blob_mask(w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| image::Luma([if x > w / 4 && x < w / 2 && y > h / 3 && y < 2 * h / 3 { 255 } else { 0 }]))
    }

    #[test]
    fn empty_mask_returns_the_input() {
        let m = tiny_model();
        let img = face(50, 37);
        let out = m.inpaint(&img, &GrayImage::new(50, 37), None, 0).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.condition, ConditionSource::Edge);
    }

    #[test]
    fn only_holes_change_and_seeds_repeat() {
        let m = tiny_model();
        let (img, mask) = (face(70, 70), blob_mask(70, 70));
        let a = m.inpaint(&img, &mask, None, 4).unwrap();
        assert_eq!(changed_outside_mask(&a.image, &img, &mask), 0);
        assert_eq!(a.image, m.inpaint(&img, &mask, None, 4).unwrap().image);
        assert_ne!(a.image, img);
    }

    #[test]
    fn sketch_is_used_when_given() {
        let m = tiny_model();
        let (img, mask) = (face(32, 32), blob_mask(32, 32));
        let sketch = GrayImage::from_fn(32, 32, |x, _| image::Luma([if x == 12 { 255 } else { 0 }]));
        let out = m.inpaint(&img, &mask, Some(&sketch), 0).unwrap();
        assert_eq!(out.condition, ConditionSource::Sketch);
    }

    #[test]
    fn size_mismatches_are_rejected() {
        let m = tiny_model();
        assert!(m.inpaint(&face(32, 32), &GrayImage::new(31, 32), None, 0).is_err());
        assert!(m.inpaint(&face(32, 32), &GrayImage::new(32, 32), Some(&GrayImage::new(8, 8)), 0).is_err());
    }

    #[test]
    fn thin_strokes_survive_downsizing() {
        let s = GrayImage::from_fn(128, 128, |x, _| image::Luma([if x == 64 { 200 } else { 0 }]));
        let small = resize_binary(&s, 32);
        assert!(small.pixels().any(|p| p[0] > 0));
    }
}
