//! SSIM, MSE and SNR on progressively noisier copies of a face, then the
//! ground-truth oracle through the full evaluation path.

use fipoly::data::{seeded_rng, synth_face};
use fipoly::imaging::Image;
use fipoly::metrics::pair_metrics;
use fipoly::trainer::{evaluate, GroundTruthOracle, TrainConfig};
use rand_distr::{Distribution, Normal};

fn main() -> fipoly::Result<()> {
    let face = synth_face(3, 64);
    let mut rng = seeded_rng(9, 0);
    for sigma in [0.0f32, 0.02, 0.05, 0.1, 0.2] {
        let noise = Normal::new(0.0, sigma.max(f32::MIN_POSITIVE)).unwrap();
        let data = face.data.iter().map(|&v| (v + noise.sample(&mut rng)).clamp(-1.0, 1.0)).collect();
        let noisy = Image::new(face.channels, face.height, face.width, data)?;
        let m = pair_metrics(&face, &noisy)?;
        println!("noise {sigma:.2}: ssim={:.4} mse={:.3} snr_db={:.2}", m.ssim, m.mse, m.snr.db);
    }
    let images: Vec<Image> = (0..8).map(|i| synth_face(i, 64)).collect();
    let report = evaluate(&GroundTruthOracle, &images, 8, 0, &TrainConfig::default().example_config())?;
    println!("oracle: {report}");
    Ok(())
}
