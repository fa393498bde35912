//! Inpaints one face twice: with edges recovered from the visible pixels and
//! with a hand-made sketch. Pass a checkpoint to use trained weights;
//! otherwise a freshly initialized miniature model is used.
//!
//!     cargo run --release --example inpaint_face -- [checkpoint] [out_dir]

use std::path::Path;

use fipoly::data::synth_face;
use fipoly::inference::{changed_outside_mask, FrozenModel};
use fipoly::model::{DiscriminatorConfig, GeneratorConfig};
use fipoly::trainer::{TrainConfig, TrainState};
use image::{GrayImage, Luma};

fn main() -> fipoly::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next().filter(|a| a != "-") {
        Some(p) => FrozenModel::load(Path::new(&p))?,
        None => {
            let cfg = TrainConfig {
                generator: GeneratorConfig { image_side: 64, ..GeneratorConfig::miniature() },
                discriminator: DiscriminatorConfig::miniature(),
                ..Default::default()
            };
            FrozenModel::from_state(TrainState::new(cfg)?, "untrained".into())
        }
    };
    let out = args.next().unwrap_or_else(|| "inpaint_preview".into());
    std::fs::create_dir_all(&out)?;

    let face = synth_face(12, 128).to_rgb8();
    let mask = GrayImage::from_fn(128, 128, |x, y| Luma([if (40..90).contains(&x) && (50..100).contains(&y) { 255 } else { 0 }]));
    // a mouth-like curve drawn into the hole
    let sketch = GrayImage::from_fn(128, 128, |x, y| {
        let curve = 80.0 + 0.004 * (x as f32 - 64.0).powi(2);
        Luma([if (44..84).contains(&x) && (y as f32 - curve).abs() < 1.0 { 255 } else { 0 }])
    });

    for (name, s) in [("edge", None), ("sketch", Some(&sketch))] {
        let res = model.inpaint(&face, &mask, s, 7)?;
        assert_eq!(changed_outside_mask(&res.image, &face, &mask), 0);
        res.image.save(format!("{out}/{name}.png"))?;
        println!("{name}: condition={:?}, written to {out}/{name}.png", res.condition);
    }
    face.save(format!("{out}/original.png"))?;
    mask.save(format!("{out}/mask.png"))?;
    Ok(())
}
