//! Training and evaluation inputs: free-form masks, Sobel edge conditions,
//! procedural faces and directory ingestion.

mod edges;
mod loader;
mod mask;
mod synth;

pub use edges::{sobel_edge_map, sobel_edge_map_visible, sobel_magnitude, EdgeConfig, Grayscale};
pub use loader::{load_face_directory, load_image_file};
pub use mask::{generate_freeform_mask, MaskConfig};
pub use synth::synth_face;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Condition, Image, Mask};
use crate::model::GeneratorInputBundle;

/// Independent generator for `(seed, stream)`. Every random draw in the
/// crate goes through here so one 64-bit seed pins a whole run.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const MASK_STREAM: u64 = 1;
pub(crate) const NOISE_STREAM: u64 = 2;

/// Where the condition channel comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionMode {
    /// Sobel edges of the full target image.
    #[default]
    Edge,
    /// A caller-supplied binary stroke image.
    Sketch,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleConfig {
    pub mask: MaskConfig,
    pub edge: EdgeConfig,
    pub mode: ConditionMode,
    pub noise_channels: usize,
}

impl ExampleConfig {
    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        self.edge.validate()?;
        if self.noise_channels == 0 {
            return Err(Error::Config("noise_channels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ground truth `t` plus the generator input derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub target: Image,
    pub bundle: GeneratorInputBundle,
}

/// Draws a mask for `seed` and builds the example around it.
pub fn make_training_example(
    target: &Image,
    seed: u64,
    cfg: &ExampleConfig,
    sketch: Option<&Condition>,
) -> Result<TrainingExample> {
    if target.height != target.width {
        return Err(Error::Data(format!("targets must be square, got {}x{}", target.height, target.width)));
    }
    let mask = generate_freeform_mask(seed, &cfg.mask, target.height)?;
    assemble_example(target, mask, seed, cfg, sketch)
}

/// Builds an example around an explicit mask.
pub fn assemble_example(
    target: &Image,
    mask: Mask,
    seed: u64,
    cfg: &ExampleConfig,
    sketch: Option<&Condition>,
) -> Result<TrainingExample> {
    let condition = match (cfg.mode, sketch) {
        (ConditionMode::Edge, _) => sobel_edge_map(target, &cfg.edge),
        (ConditionMode::Sketch, Some(s)) => s.clone(),
        (ConditionMode::Sketch, None) => return Err(Error::Data("sketch mode needs a sketch".into())),
    };
    let noise = GeneratorInputBundle::sample_noise(cfg.noise_channels, target.height, &mut seeded_rng(seed, NOISE_STREAM));
    let bundle = GeneratorInputBundle::new(target, mask, condition, noise)?;
    Ok(TrainingExample { target: target.clone(), bundle })
}

pub(crate) fn mask_rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed, MASK_STREAM)
}
