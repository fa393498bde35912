use crate::data::{make_training_example, ExampleConfig, TrainingExample};
use crate::error::{Error, Result};
use crate::imaging::{composite, Image};
use crate::metrics::{pair_metrics, MetricsReport, PairMetrics};
use crate::model::{Generator, GeneratorInputBundle};

use super::{mix64, without_condition, TrainState};

const EVAL_SALT: u64 = 0x45_56_41_4c;
const EVAL_BATCH: usize = 8;

/// Anything that fills holes. Returns raw (un-composited) images.
pub trait Inpainter {
    fn inpaint(&self, examples: &[&TrainingExample]) -> Result<Vec<Image>>;
}

/// Returns the ground truth itself; scores exactly ssim 1, mse 0.
pub struct GroundTruthOracle;

impl Inpainter for GroundTruthOracle {
    fn inpaint(&self, examples: &[&TrainingExample]) -> Result<Vec<Image>> {
        Ok(examples.iter().map(|e| e.target.clone()).collect())
    }
}

impl Inpainter for Generator {
    fn inpaint(&self, examples: &[&TrainingExample]) -> Result<Vec<Image>> {
        let bundles: Vec<&GeneratorInputBundle> = examples.iter().map(|e| &e.bundle).collect();
        self.infer(&bundles)
    }
}

impl Inpainter for TrainState {
    fn inpaint(&self, examples: &[&TrainingExample]) -> Result<Vec<Image>> {
        if !self.config.ablate_condition {
            return self.generator.inpaint(examples);
        }
        let bundles: Vec<GeneratorInputBundle> = examples.iter().map(|e| without_condition(&e.bundle)).collect();
        self.generator.infer(&bundles.iter().collect::<Vec<_>>())
    }
}

/// Edge-mode examples for the first `n` images, with masks fixed by `seed`.
pub fn evaluation_examples(images: &[Image], n: usize, seed: u64, cfg: &ExampleConfig) -> Result<Vec<TrainingExample>> {
    if n == 0 || images.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let cfg = ExampleConfig { mode: crate::data::ConditionMode::Edge, ..cfg.clone() };
    images[..n.min(images.len())]
        .iter()
        .enumerate()
        .map(|(i, img)| make_training_example(img, mix64(seed ^ EVAL_SALT ^ mix64(i as u64)), &cfg, None))
        .collect()
}

/// Inpaints, composites and scores the first `n` images (clamped to the
/// dataset size). Conditions are edges of the ground truth.
pub fn evaluate(model: &dyn Inpainter, images: &[Image], n: usize, seed: u64, cfg: &ExampleConfig) -> Result<MetricsReport> {
    let examples = evaluation_examples(images, n, seed, cfg)?;
    let mut scores: Vec<PairMetrics> = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&TrainingExample> = chunk.iter().collect();
        let raw = model.inpaint(&refs)?;
        for (ex, r) in chunk.iter().zip(&raw) {
            let out = composite(r, &ex.target, &ex.bundle.mask)?;
            scores.push(pair_metrics(&ex.target, &out)?);
        }
    }
    MetricsReport::from_pairs(&scores)
}

/// Mean absolute error between composited output and target over
/// `examples`, in `[-1, 1]` units (the identity loss before its weight).
pub fn identity_l1(model: &dyn Inpainter, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("nothing to score".into()));
    }
    let (mut total, mut count) = (0.0f64, 0usize);
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&TrainingExample> = chunk.iter().collect();
        for (ex, raw) in chunk.iter().zip(model.inpaint(&refs)?) {
            let out = composite(&raw, &ex.target, &ex.bundle.mask)?;
            total += out.data.iter().zip(&ex.target.data).map(|(&a, &b)| (a - b).abs() as f64).sum::<f64>();
            count += out.data.len();
        }
    }
    Ok(total / count as f64)
}
