//! Alternating generator/discriminator training, checkpoints and evaluation.

mod checkpoint;
mod config;
mod evaluate;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_atomically, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Alternation, DatasetSource, LossTarget, TrainConfig};
pub use evaluate::{evaluate, evaluation_examples, identity_l1, GroundTruthOracle, Inpainter};

use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{make_training_example, seeded_rng, TrainingExample};
use crate::error::{Error, Result};
use crate::imaging::{Image, Plane};
use crate::losses::{adversarial_loss_with_grad, gan_loss_with_grad, identity_loss_with_grad};
use crate::model::{
    composite_tensor, composite_backward, stack_bundles, stack_images, stack_masks, Discriminator, Generator,
    GeneratorInputBundle,
};
use crate::nn::Module;
use crate::optim::Adam;
use crate::tensor::Tensor;

const GENERATOR_INIT_STREAM: u64 = 10;
const DISCRIMINATOR_INIT_STREAM: u64 = 11;
const SHUFFLE_STREAM: u64 = 12;

/// Training allocates and frees hundreds of megabytes of patch matrices per
/// step. By default glibc hands large blocks straight back to the kernel, and
/// faulting them in again costs about a fifth of each step.
fn keep_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            // SAFETY: mallopt only adjusts allocator thresholds.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, i32::MAX);
                libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
            }
        });
    }
}

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce5_e4b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the training example for dataset entry `index` in `epoch`.
pub fn example_seed(run_seed: u64, epoch: u64, index: u64) -> u64 {
    mix64(run_seed ^ mix64(epoch.wrapping_mul(0x1_0000_0001) ^ mix64(index)))
}

/// Loss scalars of one generator-then-discriminator update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: u64,
    /// `lambda3`-weighted generator GAN term.
    pub gan: f32,
    /// `lambda4`-weighted identity term.
    pub identity: f32,
    /// Unweighted mean absolute error behind `identity`.
    pub identity_l1: f32,
    /// Discriminator objective after the generator update.
    pub adversarial: f32,
}

/// A training batch in tensor form.
pub struct Batch {
    pub input: Tensor,
    pub target: Tensor,
    pub mask: Tensor,
}

impl Batch {
    pub fn from_examples(examples: &[TrainingExample], ablate_condition: bool) -> Result<Self> {
        let bundles: Vec<GeneratorInputBundle>;
        let refs: Vec<&GeneratorInputBundle> = if ablate_condition {
            bundles = examples.iter().map(|e| without_condition(&e.bundle)).collect();
            bundles.iter().collect()
        } else {
            examples.iter().map(|e| &e.bundle).collect()
        };
        let targets: Vec<&Image> = examples.iter().map(|e| &e.target).collect();
        let masks: Vec<_> = examples.iter().map(|e| &e.bundle.mask).collect();
        Ok(Self { input: stack_bundles(&refs)?, target: stack_images(&targets)?, mask: stack_masks(&masks)? })
    }
}

/// Copy of `bundle` with an all-zero condition plane.
pub fn without_condition(bundle: &GeneratorInputBundle) -> GeneratorInputBundle {
    let mut b = bundle.clone();
    b.condition.0 = Plane::zeros(b.condition.height(), b.condition.width());
    b
}

/// Parameters, optimizer state and progress of a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Completed generator updates.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator.clone(), &mut seeded_rng(config.seed, GENERATOR_INIT_STREAM))?;
        let discriminator = Discriminator::new(
            config.discriminator.clone(),
            config.generator.image_side,
            &mut seeded_rng(config.seed, DISCRIMINATOR_INIT_STREAM),
        )?;
        let mut opt_g = Adam::new(config.optimizer_g);
        opt_g.init_for(&generator);
        let mut opt_d = Adam::new(config.optimizer_d);
        opt_d.init_for(&discriminator);
        Ok(Self { config, generator, discriminator, opt_g, opt_d, step: 0, epoch: 0 })
    }

    fn loss_image(&self, raw: &Tensor, batch: &Batch) -> Result<Tensor> {
        match self.config.loss_on {
            LossTarget::Composite => composite_tensor(raw, &batch.target, &batch.mask),
            LossTarget::Raw => Ok(raw.clone()),
        }
    }

    fn non_finite(&self, term: &'static str) -> Error {
        Error::NonFiniteLoss { step: self.step, term }
    }

    /// Turns a non-finite tensor rejected inside a network into a loss abort.
    fn blame(&self, term: &'static str) -> impl Fn(Error) -> Error + '_ {
        move |e| match e {
            Error::InvalidParameter(m) if m.contains("non-finite") => self.non_finite(term),
            e => e,
        }
    }

    /// Generator half: GAN + identity loss, gradient step on G only.
    /// Returns the losses and the (detached) image the discriminator saw.
    pub fn generator_step(&mut self, batch: &Batch) -> Result<(StepLosses, Tensor)> {
        let weights = self.config.weights;
        self.generator.zero_grad();
        self.generator.advance_spectral();
        let (raw, g_cache) = self.generator.forward(&batch.input).map_err(self.blame("generator output"))?;
        if !raw.is_finite() {
            return Err(self.non_finite("generator output"));
        }
        let fake = self.loss_image(&raw, batch)?;
        let (scores, d_cache) = self.discriminator.forward(&fake).map_err(self.blame("gan"))?;
        let gan = gan_loss_with_grad(&scores, self.config.labels.real_label, weights.lambda3)?;
        if !gan.value.is_finite() {
            return Err(self.non_finite("gan"));
        }
        let identity = identity_loss_with_grad(&fake, &batch.target, weights.lambda4)?;
        let identity_l1 = crate::losses::identity_loss(&fake, &batch.target, 1.0)?;
        let mut d_fake = self.discriminator.input_grad(&d_cache, &gan.grad)?;
        d_fake.add_assign(&identity.grad);
        let d_raw = match self.config.loss_on {
            LossTarget::Composite => composite_backward(&d_fake, &batch.mask)?,
            LossTarget::Raw => d_fake,
        };
        self.generator.backward(&g_cache, &d_raw)?;
        self.opt_g.step(&mut self.generator)?;
        self.step += 1;
        let losses = StepLosses { step: self.step, gan: gan.value, identity: identity.value, identity_l1, adversarial: f32::NAN };
        Ok((losses, fake))
    }

    /// Discriminator half on real targets and detached fakes; gradient step on D only.
    pub fn discriminator_step(&mut self, batch: &Batch, fake: &Tensor) -> Result<f32> {
        let weights = self.config.weights;
        self.discriminator.zero_grad();
        self.discriminator.advance_spectral();
        let n = batch.target.shape()[0];
        let both = Tensor::concat_batch(&[&batch.target, fake])?;
        let (scores, cache) = self.discriminator.forward(&both).map_err(self.blame("adversarial"))?;
        let (real, fake_scores) = (scores.batch_range(0, n)?, scores.batch_range(n, 2 * n)?);
        let (value, g_real, g_fake) =
            adversarial_loss_with_grad(&real, &fake_scores, self.config.labels, weights.lambda1, weights.lambda2)?;
        if !value.is_finite() {
            return Err(self.non_finite("adversarial"));
        }
        let grad = Tensor::concat_batch(&[&g_real, &g_fake])?;
        self.discriminator.backward(&cache, &grad, false)?;
        self.opt_d.step(&mut self.discriminator)?;
        Ok(value)
    }

    /// One generator update followed by one discriminator update.
    pub fn train_step(&mut self, examples: &[TrainingExample]) -> Result<StepLosses> {
        let batch = Batch::from_examples(examples, self.config.ablate_condition)?;
        let (mut losses, fake) = self.generator_step(&batch)?;
        losses.adversarial = self.discriminator_step(&batch, &fake)?;
        Ok(losses)
    }

    /// Image the discriminator would see for `batch` under the current generator.
    pub fn detached_fake(&self, batch: &Batch) -> Result<Tensor> {
        let (raw, _) = self.generator.forward(&batch.input)?;
        self.loss_image(&raw, batch)
    }

    fn reached_max(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    fn epoch_batches(&self, len: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut seeded_rng(self.config.seed, SHUFFLE_STREAM ^ (self.epoch << 8)));
        order.chunks(self.config.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Trains until `epochs` or `max_steps` is reached. `on_step` sees every
    /// update and may write checkpoints; an error from it stops training.
    pub fn fit(&mut self, images: &[Image], mut on_step: impl FnMut(&TrainState, &StepLosses) -> Result<()>) -> Result<Vec<StepLosses>> {
        if images.is_empty() {
            return Err(Error::EmptyDataset("no training images".into()));
        }
        keep_freed_memory();
        let cfg = self.config.example_config();
        let mut history = Vec::new();
        while (self.epoch as usize) < self.config.epochs && !self.reached_max() {
            let batches = self.epoch_batches(images.len());
            let mut done = 0;
            let (seed, epoch) = (self.config.seed, self.epoch);
            let make = |indices: &Vec<usize>| -> Result<Vec<TrainingExample>> {
                indices
                    .iter()
                    .map(|&i| make_training_example(&images[i], example_seed(seed, epoch, i as u64), &cfg, None))
                    .collect()
            };
            match self.config.alternate {
                Alternation::Step => {
                    // a worker builds batches ahead of the update loop
                    std::thread::scope(|scope| -> Result<()> {
                        let (tx, rx) = sync_channel::<Result<Vec<TrainingExample>>>(2);
                        let batches_ref = &batches;
                        let make_ref = &make;
                        scope.spawn(move || {
                            for b in batches_ref {
                                if tx.send(make_ref(b)).is_err() {
                                    break;
                                }
                            }
                        });
                        for examples in rx {
                            if self.reached_max() {
                                break;
                            }
                            let losses = self.train_step(&examples?)?;
                            on_step(self, &losses)?;
                            history.push(losses);
                            done += 1;
                        }
                        Ok(())
                    })?;
                }
                Alternation::Epoch => {
                    let mut pending = Vec::new();
                    for indices in &batches {
                        if self.reached_max() {
                            break;
                        }
                        let batch = Batch::from_examples(&make(indices)?, self.config.ablate_condition)?;
                        let (losses, _) = self.generator_step(&batch)?;
                        pending.push((batch, losses));
                    }
                    for (batch, mut losses) in pending {
                        let fake = self.detached_fake(&batch)?;
                        losses.adversarial = self.discriminator_step(&batch, &fake)?;
                        on_step(self, &losses)?;
                        history.push(losses);
                        done += 1;
                    }
                }
            }
            if done == batches.len() {
                self.epoch += 1;
            }
        }
        Ok(history)
    }
}

/// SHA-256 over every tensor a module visits, names included.
pub fn parameter_digest<T: crate::tensor::Real>(module: &dyn Module<T>) -> String {
    let mut h = Sha256::new();
    module.visit("", &mut |name, t| {
        h.update(name.as_bytes());
        for v in t.data() {
            let mut buf = Vec::with_capacity(8);
            v.write_le(&mut buf);
            h.update(&buf);
        }
    });
    hex::encode(h.finalize())
}
