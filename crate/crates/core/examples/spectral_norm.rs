//! Power iteration on a random conv kernel. The sigma estimate climbs toward
//! the top singular value from below; dividing by it leaves a kernel whose
//! spectral norm is close to 1.

use fipoly::data::seeded_rng;
use fipoly::nn::SpectralState;
use fipoly::Tensor;

fn main() -> fipoly::Result<()> {
    let mut rng = seeded_rng(42, 0);
    let kernel: Tensor<f64> = Tensor::randn(&[16, 8, 4, 4], 0.2, &mut rng);
    let mut state = SpectralState::new(16, &mut rng);
    state.iterations_per_step = 1;
    for it in 1..=12 {
        state.power_iterate(&kernel)?;
        let f = state.factors(&kernel)?;
        println!("iteration {it:>2}: sigma ~ {:.6}", f.sigma);
    }
    let (normalized, _) = state.normalized(&kernel)?;
    let mut check = SpectralState::new(16, &mut rng);
    check.iterations_per_step = 200;
    check.power_iterate(&normalized)?;
    println!("top singular value after normalization ~ {:.6}", check.factors(&normalized)?.sigma);
    Ok(())
}
