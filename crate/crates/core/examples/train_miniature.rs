//! A short training run with the miniature networks, then a checkpoint
//! round trip.
//!
//!     cargo run --release --example train_miniature -- [steps]

use fipoly::model::{DiscriminatorConfig, GeneratorConfig};
use fipoly::trainer::{evaluate, load_checkpoint, save_checkpoint, DatasetSource, TrainConfig, TrainState};

fn main() -> fipoly::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let cfg = TrainConfig {
        seed: 1,
        epochs: 1000,
        max_steps: Some(steps),
        batch_size: 4,
        generator: GeneratorConfig { image_side: 32, ..GeneratorConfig::miniature() },
        discriminator: DiscriminatorConfig::miniature(),
        dataset: DatasetSource::Synthetic(8),
        ..Default::default()
    };
    let images = cfg.dataset.load(32, cfg.seed)?;
    let mut state = TrainState::new(cfg.clone())?;
    state.fit(&images, |_, l| {
        if l.step % 10 == 0 {
            println!("step {:>4}  gan {:.4}  identity L1 {:.4}  D {:.4}", l.step, l.gan, l.identity_l1, l.adversarial);
        }
        Ok(())
    })?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("mini.fipg");
    let id = save_checkpoint(&state, &path)?;
    let (restored, _) = load_checkpoint(&path)?;
    let ex = cfg.example_config();
    let before = evaluate(&state, &images, 8, 0, &ex)?;
    let after = evaluate(&restored, &images, 8, 0, &ex)?;
    println!("model {}", &id[..16]);
    println!("trained:  {before}");
    println!("restored: {after}");
    Ok(())
}
