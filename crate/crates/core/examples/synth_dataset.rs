//! Writes a few synthetic faces with their free-form masks and edge maps.
//!
//!     cargo run --example synth_dataset -- [out_dir]

use fipoly::data::{generate_freeform_mask, sobel_edge_map, synth_face, EdgeConfig, MaskConfig};
use fipoly::imaging::apply_mask;

fn main() -> fipoly::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_preview".into());
    std::fs::create_dir_all(&out)?;
    let side = 64;
    for i in 0..6u64 {
        let face = synth_face(i, side);
        let mask = generate_freeform_mask(i, &MaskConfig::default(), side)?;
        let edges = sobel_edge_map(&face, &EdgeConfig::default());
        face.to_rgb8().save(format!("{out}/face_{i}.png"))?;
        apply_mask(&face, &mask)?.to_rgb8().save(format!("{out}/damaged_{i}.png"))?;
        edges.0.to_gray8().save(format!("{out}/edges_{i}.png"))?;
        println!("face {i}: {:.1}% of pixels masked", 100.0 * mask.coverage());
    }
    println!("wrote 18 images to {out}/");
    Ok(())
}
